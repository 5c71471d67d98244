//! The 96-byte image header.

use byteorder::{ByteOrder, LittleEndian};

use crate::error::{Error, Result};
use crate::format::{
    Codec, MAX_BLOCK_SIZE, METADATA_BLOCK_SIZE, MIN_BLOCK_SIZE, SQUASHFS_MAGIC, SUPERBLOCK_SIZE,
    VERSION_MAJOR, VERSION_MINOR,
};

/// Packed address of a metadata record: byte offset of its metadata block
/// relative to the table start, plus the offset inside the decompressed
/// block. Serialized as `(block_start << 16) | intra_offset`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct InodeRef {
    pub block_start: u64,
    pub intra_offset: u16,
}

impl InodeRef {
    pub fn new(block_start: u64, intra_offset: u16) -> Self {
        debug_assert!((intra_offset as usize) < METADATA_BLOCK_SIZE);
        InodeRef { block_start, intra_offset }
    }

    pub fn to_u64(self) -> u64 {
        (self.block_start << 16) | u64::from(self.intra_offset)
    }

    pub fn from_u64(v: u64) -> Result<Self> {
        let r = InodeRef {
            block_start: v >> 16,
            intra_offset: (v & 0xffff) as u16,
        };
        if r.intra_offset as usize >= METADATA_BLOCK_SIZE {
            return Err(Error::Corrupt(format!(
                "inode ref intra offset {} out of range",
                r.intra_offset
            )));
        }
        Ok(r)
    }
}

/// Decoded superblock. Magic and the 4.0 version are invariants, not fields.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Superblock {
    pub inode_count: u32,
    pub mod_time: u32,
    pub block_size: u32,
    pub fragment_count: u32,
    pub compressor_id: u16,
    pub block_log: u16,
    pub flags: u16,
    pub id_count: u16,
    pub root_inode_ref: InodeRef,
    pub bytes_used: u64,
    pub id_table_start: u64,
    pub xattr_table_start: u64,
    pub inode_table_start: u64,
    pub directory_table_start: u64,
    pub fragment_table_start: u64,
    pub export_table_start: u64,
}

impl Superblock {
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
        if self.block_log >= 32 || (1u32 << self.block_log) != self.block_size {
            return Err(Error::Geometry(format!(
                "block log {} does not match block size {}",
                self.block_log, self.block_size
            )));
        }
        Codec::from_id(self.compressor_id)?;
        if self.inode_table_start >= self.directory_table_start {
            return Err(Error::Geometry(format!(
                "inode table at {} not before directory table at {}",
                self.inode_table_start, self.directory_table_start
            )));
        }
        if self.directory_table_start > self.bytes_used {
            return Err(Error::Geometry(format!(
                "directory table at {} past end of image ({} bytes used)",
                self.directory_table_start, self.bytes_used
            )));
        }
        if self.id_count == 0 {
            return Err(Error::Geometry("id table is empty".into()));
        }
        Ok(())
    }

    pub fn codec(&self) -> Result<Codec> {
        Codec::from_id(self.compressor_id)
    }

    pub fn has_flag(&self, flag: u16) -> bool {
        self.flags & flag != 0
    }
}

pub fn parse_superblock(bytes: &[u8]) -> Result<Superblock> {
    if bytes.len() != SUPERBLOCK_SIZE {
        return Err(Error::TruncatedBlock(0));
    }
    let magic = LittleEndian::read_u32(&bytes[0..4]);
    if magic != SQUASHFS_MAGIC {
        return Err(Error::BadMagic);
    }
    let version_major = LittleEndian::read_u16(&bytes[28..30]);
    let version_minor = LittleEndian::read_u16(&bytes[30..32]);
    if version_major != VERSION_MAJOR || version_minor != VERSION_MINOR {
        return Err(Error::UnsupportedVersion(version_major, version_minor));
    }
    let sb = Superblock {
        inode_count: LittleEndian::read_u32(&bytes[4..8]),
        mod_time: LittleEndian::read_u32(&bytes[8..12]),
        block_size: LittleEndian::read_u32(&bytes[12..16]),
        fragment_count: LittleEndian::read_u32(&bytes[16..20]),
        compressor_id: LittleEndian::read_u16(&bytes[20..22]),
        block_log: LittleEndian::read_u16(&bytes[22..24]),
        flags: LittleEndian::read_u16(&bytes[24..26]),
        id_count: LittleEndian::read_u16(&bytes[26..28]),
        root_inode_ref: InodeRef::from_u64(LittleEndian::read_u64(&bytes[32..40]))?,
        bytes_used: LittleEndian::read_u64(&bytes[40..48]),
        id_table_start: LittleEndian::read_u64(&bytes[48..56]),
        xattr_table_start: LittleEndian::read_u64(&bytes[56..64]),
        inode_table_start: LittleEndian::read_u64(&bytes[64..72]),
        directory_table_start: LittleEndian::read_u64(&bytes[72..80]),
        fragment_table_start: LittleEndian::read_u64(&bytes[80..88]),
        export_table_start: LittleEndian::read_u64(&bytes[88..96]),
    };
    sb.validate()?;
    Ok(sb)
}

pub fn write_superblock(sb: &Superblock) -> Result<[u8; SUPERBLOCK_SIZE]> {
    sb.validate()?;
    let mut out = [0u8; SUPERBLOCK_SIZE];
    LittleEndian::write_u32(&mut out[0..4], SQUASHFS_MAGIC);
    LittleEndian::write_u32(&mut out[4..8], sb.inode_count);
    LittleEndian::write_u32(&mut out[8..12], sb.mod_time);
    LittleEndian::write_u32(&mut out[12..16], sb.block_size);
    LittleEndian::write_u32(&mut out[16..20], sb.fragment_count);
    LittleEndian::write_u16(&mut out[20..22], sb.compressor_id);
    LittleEndian::write_u16(&mut out[22..24], sb.block_log);
    LittleEndian::write_u16(&mut out[24..26], sb.flags);
    LittleEndian::write_u16(&mut out[26..28], sb.id_count);
    LittleEndian::write_u16(&mut out[28..30], VERSION_MAJOR);
    LittleEndian::write_u16(&mut out[30..32], VERSION_MINOR);
    LittleEndian::write_u64(&mut out[32..40], sb.root_inode_ref.to_u64());
    LittleEndian::write_u64(&mut out[40..48], sb.bytes_used);
    LittleEndian::write_u64(&mut out[48..56], sb.id_table_start);
    LittleEndian::write_u64(&mut out[56..64], sb.xattr_table_start);
    LittleEndian::write_u64(&mut out[64..72], sb.inode_table_start);
    LittleEndian::write_u64(&mut out[72..80], sb.directory_table_start);
    LittleEndian::write_u64(&mut out[80..88], sb.fragment_table_start);
    LittleEndian::write_u64(&mut out[88..96], sb.export_table_start);
    Ok(out)
}
