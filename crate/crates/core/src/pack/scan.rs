//! Source tree scanning: a deterministic metadata snapshot taken before
//! packing.

use std::collections::BTreeSet;
use std::fs;
use std::os::unix::ffi::OsStrExt;
use std::os::unix::fs::MetadataExt;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::pack::PackOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Dir,
    File,
    Symlink,
}

#[derive(Debug, Clone)]
pub struct SourceNode {
    /// Path relative to the tree root; empty for the root itself.
    pub rel_path: PathBuf,
    pub name: Vec<u8>,
    pub kind: NodeKind,
    pub size: u64,
    pub mode: u16,
    pub uid: u32,
    pub gid: u32,
    pub mtime: u32,
    pub target: Vec<u8>,
    pub parent: usize,
    pub children: Vec<usize>,
    pub depth: u32,
    /// Post-order number: every directory numbers higher than its children.
    pub inode_number: u32,
}

/// Flattened snapshot of a directory tree: depth-first order with byte-wise
/// sorted siblings, node 0 the root.
#[derive(Debug)]
pub struct SourceTree {
    pub root: PathBuf,
    pub nodes: Vec<SourceNode>,
    pub files: u64,
    pub dirs: u64,
    pub symlinks: u64,
    pub max_depth: u32,
    pub total_file_bytes: u64,
}

impl SourceTree {
    pub fn abs_path(&self, node: &SourceNode) -> PathBuf {
        self.root.join(&node.rel_path)
    }
}

pub(crate) fn mtime_of(meta: &fs::Metadata) -> u32 {
    meta.mtime().clamp(0, i64::from(u32::MAX)) as u32
}

fn mode_of(meta: &fs::Metadata) -> u16 {
    (meta.mode() & 0o7777) as u16
}

/// Scan every file, directory and symlink under `root`.
pub fn scan_source(root: impl AsRef<Path>, opts: &PackOptions) -> Result<SourceTree> {
    scan_source_filtered(root, opts, None)
}

/// Scan, keeping only the top-level entries named in `top_filter` (used when
/// packing one shard of a larger dataset).
pub fn scan_source_filtered(
    root: impl AsRef<Path>,
    opts: &PackOptions,
    top_filter: Option<&BTreeSet<Vec<u8>>>,
) -> Result<SourceTree> {
    opts.validate()?;
    let root = root.as_ref().to_path_buf();
    let meta = fs::symlink_metadata(&root).map_err(|e| Error::Unreadable {
        path: root.clone(),
        source: e,
    })?;
    if !meta.is_dir() {
        return Err(Error::NotADirectory);
    }
    let mut tree = SourceTree {
        root: root.clone(),
        nodes: vec![SourceNode {
            rel_path: PathBuf::new(),
            name: Vec::new(),
            kind: NodeKind::Dir,
            size: 0,
            mode: mode_of(&meta),
            uid: meta.uid(),
            gid: meta.gid(),
            mtime: mtime_of(&meta),
            target: Vec::new(),
            parent: 0,
            children: Vec::new(),
            depth: 0,
            inode_number: 0,
        }],
        files: 0,
        dirs: 1,
        symlinks: 0,
        max_depth: 0,
        total_file_bytes: 0,
    };
    scan_dir(&mut tree, 0, opts, top_filter)?;
    number_post_order(&mut tree);
    Ok(tree)
}

fn scan_dir(
    tree: &mut SourceTree,
    dir_idx: usize,
    opts: &PackOptions,
    top_filter: Option<&BTreeSet<Vec<u8>>>,
) -> Result<()> {
    let dir_abs = tree.abs_path(&tree.nodes[dir_idx]);
    let mut names: Vec<Vec<u8>> = Vec::new();
    let iter = fs::read_dir(&dir_abs).map_err(|e| Error::Unreadable {
        path: dir_abs.clone(),
        source: e,
    })?;
    for entry in iter {
        let entry = entry.map_err(|e| Error::Unreadable {
            path: dir_abs.clone(),
            source: e,
        })?;
        names.push(entry.file_name().as_bytes().to_vec());
    }
    names.sort_unstable();
    if let Some(filter) = top_filter {
        names.retain(|n| filter.contains(n));
    }

    for name in names {
        let abs = dir_abs.join(std::ffi::OsStr::from_bytes(&name));
        let rel = tree.nodes[dir_idx]
            .rel_path
            .join(std::ffi::OsStr::from_bytes(&name));
        let meta = fs::symlink_metadata(&abs).map_err(|e| Error::Unreadable {
            path: abs.clone(),
            source: e,
        })?;
        let depth = tree.nodes[dir_idx].depth + 1;
        tree.max_depth = tree.max_depth.max(depth);
        let ft = meta.file_type();

        let node = if ft.is_dir() {
            tree.dirs += 1;
            SourceNode {
                rel_path: rel,
                name,
                kind: NodeKind::Dir,
                size: 0,
                mode: mode_of(&meta),
                uid: meta.uid(),
                gid: meta.gid(),
                mtime: mtime_of(&meta),
                target: Vec::new(),
                parent: dir_idx,
                children: Vec::new(),
                depth,
                inode_number: 0,
            }
        } else if ft.is_symlink() {
            let target = fs::read_link(&abs)
                .map_err(|e| Error::Unreadable {
                    path: abs.clone(),
                    source: e,
                })?
                .as_os_str()
                .as_bytes()
                .to_vec();
            if opts.follow_symlinks {
                // Resolve file symlinks to copies; directory symlinks stay
                // symbolic to keep the scan cycle-free.
                match fs::metadata(&abs) {
                    Ok(resolved) if resolved.is_file() => {
                        tree.files += 1;
                        tree.total_file_bytes += resolved.len();
                        let node = SourceNode {
                            rel_path: rel,
                            name,
                            kind: NodeKind::File,
                            size: resolved.len(),
                            mode: mode_of(&resolved),
                            uid: resolved.uid(),
                            gid: resolved.gid(),
                            mtime: mtime_of(&resolved),
                            target: Vec::new(),
                            parent: dir_idx,
                            children: Vec::new(),
                            depth,
                            inode_number: 0,
                        };
                        let idx = tree.nodes.len();
                        tree.nodes.push(node);
                        tree.nodes[dir_idx].children.push(idx);
                        continue;
                    }
                    Ok(_) => {}
                    Err(_) => return Err(Error::BrokenSymlink(abs)),
                }
            }
            tree.symlinks += 1;
            SourceNode {
                rel_path: rel,
                name,
                kind: NodeKind::Symlink,
                size: target.len() as u64,
                mode: mode_of(&meta),
                uid: meta.uid(),
                gid: meta.gid(),
                mtime: mtime_of(&meta),
                target,
                parent: dir_idx,
                children: Vec::new(),
                depth,
                inode_number: 0,
            }
        } else if ft.is_file() {
            tree.files += 1;
            tree.total_file_bytes += meta.len();
            SourceNode {
                rel_path: rel,
                name,
                kind: NodeKind::File,
                size: meta.len(),
                mode: mode_of(&meta),
                uid: meta.uid(),
                gid: meta.gid(),
                mtime: mtime_of(&meta),
                target: Vec::new(),
                parent: dir_idx,
                children: Vec::new(),
                depth,
                inode_number: 0,
            }
        } else {
            return Err(Error::UnsupportedNode(abs));
        };

        let idx = tree.nodes.len();
        let is_dir = node.kind == NodeKind::Dir;
        tree.nodes.push(node);
        tree.nodes[dir_idx].children.push(idx);
        if is_dir {
            scan_dir(tree, idx, opts, None)?;
        }
    }
    Ok(())
}

/// Assign inode numbers 1..=N, children before parents. The root takes N.
fn number_post_order(tree: &mut SourceTree) {
    let mut counter = 0u32;
    let mut stack: Vec<(usize, usize)> = vec![(0, 0)];
    while let Some((idx, child_at)) = stack.pop() {
        let children = &tree.nodes[idx].children;
        if child_at < children.len() {
            let child = children[child_at];
            stack.push((idx, child_at + 1));
            stack.push((child, 0));
        } else {
            counter += 1;
            tree.nodes[idx].inode_number = counter;
        }
    }
}
