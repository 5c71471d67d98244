//! Crate-wide error type.

use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // Image format errors.
    #[error("bad magic, not a squashfs image")]
    BadMagic,
    #[error("unsupported squashfs version {0}.{1}, only 4.0 is supported")]
    UnsupportedVersion(u16, u16),
    #[error("superblock geometry invalid: {0}")]
    Geometry(String),
    #[error("unsupported compressor: {0}")]
    UnsupportedCompressor(String),
    #[error("metadata block truncated at offset {0}")]
    TruncatedBlock(u64),
    #[error("decompression failed: {0}")]
    Decompress(String),
    #[error("decompressed block exceeds {0} bytes")]
    OversizeBlock(u32),
    #[error("unsupported inode kind: {0}")]
    UnsupportedInodeKind(String),
    #[error("inode record truncated")]
    TruncatedInode,
    #[error("inode {0} carries extended attributes, which are not supported")]
    XattrsUnsupported(u32),
    #[error("directory entries not sorted ascending")]
    UnsortedEntries,
    #[error("directory entry name longer than 256 bytes")]
    NameTooLong,
    #[error("invalid directory entry name: {0}")]
    InvalidName(String),
    #[error("directory entry inode delta out of range")]
    BadDelta,
    #[error("lookup table truncated: {0}")]
    TruncatedTable(String),
    #[error("corrupt image: {0}")]
    Corrupt(String),

    // Virtual filesystem errors.
    #[error("no such entry")]
    NotFound,
    #[error("not a directory")]
    NotADirectory,
    #[error("not a regular file")]
    NotAFile,
    #[error("not a symlink")]
    NotASymlink,

    // Source tree errors.
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: PathBuf,
        source: io::Error,
    },
    #[error("unsupported node kind at {0} (device, fifo or socket)")]
    UnsupportedNode(PathBuf),
    #[error("broken symlink at {0}")]
    BrokenSymlink(PathBuf),
    #[error("source changed between scan and pack: {0}")]
    SourceChanged(PathBuf),

    // Shard / overlay errors.
    #[error("dataset root has no members")]
    EmptyDataset,
    #[error("overlay has no bundles")]
    EmptyOverlay,
    #[error("bundle digest mismatch for {0}")]
    DigestMismatch(String),
    #[error("invalid shard manifest: {0}")]
    BadManifest(String),

    // SFTP wire errors.
    #[error("sftp frame truncated")]
    TruncatedFrame,
    #[error("unknown sftp packet type {0}")]
    UnknownType(u8),

    // Mount adapter errors.
    #[error("userspace mount facility unavailable: {0}")]
    FacilityUnavailable(String),
    #[error("mount denied: {0}")]
    MountDenied(String),

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Attach an image path to an error bubbling out of a bundle.
    pub fn with_image(self, path: impl Into<PathBuf>) -> Error {
        match self {
            Error::Image { .. } => self,
            other => Error::Image {
                path: path.into(),
                source: Box::new(other),
            },
        }
    }

    /// True for errors caused by the environment rather than image contents.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io(_) | Error::Unreadable { .. } | Error::FacilityUnavailable(_) | Error::MountDenied(_)
        ) || matches!(self, Error::Image { source, .. } if source.is_io())
    }
}
