//! Bit-exact codecs for the SquashFS 4.0 on-disk structures.
//!
//! Everything in this module is a pure transformation over byte sequences,
//! little-endian throughout, shared by the packer and the reader.

mod compress;
mod dir;
mod inode;
mod metablock;
mod superblock;
mod table;

pub use compress::{codec_compress, codec_decompress, Codec};
pub use dir::{decode_dir_listing, encode_dir_listing, DirEntry};
pub use inode::{decode_inode, encode_inode, InodePayload, InodeRecord};
pub use metablock::{read_metadata_block, write_metadata_stream, MetaCursor, MetaStreamWriter};
pub use superblock::{parse_superblock, write_superblock, InodeRef, Superblock};
pub use table::{
    read_export_table, read_fragment_table, read_id_table, read_lookup_table, write_lookup_table,
    FragmentEntry,
};

pub const SQUASHFS_MAGIC: u32 = 0x7371_7368;
pub const SUPERBLOCK_SIZE: usize = 96;
pub const VERSION_MAJOR: u16 = 4;
pub const VERSION_MINOR: u16 = 0;

/// Decompressed size limit for one metadata block.
pub const METADATA_BLOCK_SIZE: usize = 8192;
/// Bit in the metadata block header marking the payload as stored verbatim.
pub const METADATA_UNCOMPRESSED: u16 = 0x8000;

/// Bit in a data block size word marking the block as stored verbatim.
pub const DATA_UNCOMPRESSED: u32 = 1 << 24;

/// Maximum length of one directory entry name.
pub const NAME_MAX: usize = 256;
/// Maximum number of entries grouped under one directory header.
pub const DIR_HEADER_MAX_ENTRIES: usize = 256;
/// Largest listing a basic directory inode can describe (u16 size minus the
/// constant 3 offset).
pub const BASIC_DIR_MAX_LISTING: usize = 65532;

pub const MIN_BLOCK_SIZE: u32 = 4096;
pub const MAX_BLOCK_SIZE: u32 = 1_048_576;

/// Sentinel for an absent table in the superblock.
pub const TABLE_ABSENT: u64 = u64::MAX;
/// Sentinel for "no fragment" in a file inode.
pub const FRAGMENT_NONE: u32 = u32::MAX;
/// Sentinel for "no xattrs" in an extended inode.
pub const XATTR_NONE: u32 = u32::MAX;

/// Superblock flag bits. Only a subset is acted upon; the rest are accepted
/// on read and never emitted by the writer.
pub mod flags {
    pub const UNCOMPRESSED_INODES: u16 = 0x0001;
    pub const UNCOMPRESSED_DATA: u16 = 0x0002;
    pub const CHECK: u16 = 0x0004;
    pub const UNCOMPRESSED_FRAGMENTS: u16 = 0x0008;
    pub const NO_FRAGMENTS: u16 = 0x0010;
    pub const ALWAYS_FRAGMENTS: u16 = 0x0020;
    pub const DUPLICATES: u16 = 0x0040;
    pub const EXPORTABLE: u16 = 0x0080;
    pub const UNCOMPRESSED_XATTRS: u16 = 0x0100;
    pub const NO_XATTRS: u16 = 0x0200;
    pub const COMPRESSOR_OPTIONS: u16 = 0x0400;
    pub const UNCOMPRESSED_IDS: u16 = 0x0800;
}

/// Inode kind tags as stored on disk.
pub mod kind {
    pub const BASIC_DIR: u16 = 1;
    pub const BASIC_FILE: u16 = 2;
    pub const SYMLINK: u16 = 3;
    pub const EXT_DIR: u16 = 8;
    pub const EXT_FILE: u16 = 9;
}
