//! Inode records as stored in the inode table.

use std::io::Read;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::format::{kind, FRAGMENT_NONE, XATTR_NONE};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InodeRecord {
    pub mode: u16,
    pub uid_index: u16,
    pub gid_index: u16,
    pub mtime: u32,
    pub inode_number: u32,
    pub payload: InodePayload,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InodePayload {
    BasicDir {
        dir_block_start: u32,
        link_count: u32,
        /// On-disk listing length + 3.
        listing_size: u16,
        dir_block_offset: u16,
        parent_inode: u32,
    },
    ExtDir {
        link_count: u32,
        listing_size: u32,
        dir_block_start: u32,
        parent_inode: u32,
        dir_block_offset: u16,
    },
    BasicFile {
        data_start: u32,
        fragment_index: u32,
        fragment_offset: u32,
        file_size: u32,
        block_sizes: Vec<u32>,
    },
    ExtFile {
        data_start: u64,
        file_size: u64,
        sparse_bytes: u64,
        link_count: u32,
        fragment_index: u32,
        fragment_offset: u32,
        block_sizes: Vec<u32>,
    },
    Symlink {
        link_count: u32,
        target: Vec<u8>,
    },
}

impl InodeRecord {
    pub fn kind_tag(&self) -> u16 {
        match self.payload {
            InodePayload::BasicDir { .. } => kind::BASIC_DIR,
            InodePayload::BasicFile { .. } => kind::BASIC_FILE,
            InodePayload::Symlink { .. } => kind::SYMLINK,
            InodePayload::ExtDir { .. } => kind::EXT_DIR,
            InodePayload::ExtFile { .. } => kind::EXT_FILE,
        }
    }

    /// Directory-entry type tag: always the basic kind.
    pub fn basic_kind_tag(&self) -> u16 {
        match self.payload {
            InodePayload::BasicDir { .. } | InodePayload::ExtDir { .. } => kind::BASIC_DIR,
            InodePayload::BasicFile { .. } | InodePayload::ExtFile { .. } => kind::BASIC_FILE,
            InodePayload::Symlink { .. } => kind::SYMLINK,
        }
    }

    pub fn is_dir(&self) -> bool {
        matches!(
            self.payload,
            InodePayload::BasicDir { .. } | InodePayload::ExtDir { .. }
        )
    }

    pub fn is_file(&self) -> bool {
        matches!(
            self.payload,
            InodePayload::BasicFile { .. } | InodePayload::ExtFile { .. }
        )
    }
}

fn unsupported_kind_name(tag: u16) -> String {
    match tag {
        4 => "blockdev".into(),
        5 => "chardev".into(),
        6 => "fifo".into(),
        7 => "socket".into(),
        10 => "ext symlink".into(),
        11 => "ext blockdev".into(),
        12 => "ext chardev".into(),
        13 => "ext fifo".into(),
        14 => "ext socket".into(),
        other => format!("unknown tag {other}"),
    }
}

/// Number of data blocks a file inode carries: the tail lives in a fragment
/// when one is referenced, otherwise in a short final block.
pub fn file_block_count(file_size: u64, block_size: u32, has_fragment: bool) -> u64 {
    if has_fragment {
        file_size / u64::from(block_size)
    } else {
        file_size.div_ceil(u64::from(block_size))
    }
}

pub fn decode_inode(r: &mut impl Read, block_size: u32) -> Result<InodeRecord> {
    let eof = |_| Error::TruncatedInode;
    let tag = r.read_u16::<LittleEndian>().map_err(eof)?;
    let mode = r.read_u16::<LittleEndian>().map_err(eof)?;
    let uid_index = r.read_u16::<LittleEndian>().map_err(eof)?;
    let gid_index = r.read_u16::<LittleEndian>().map_err(eof)?;
    let mtime = r.read_u32::<LittleEndian>().map_err(eof)?;
    let inode_number = r.read_u32::<LittleEndian>().map_err(eof)?;

    let payload = match tag {
        kind::BASIC_DIR => InodePayload::BasicDir {
            dir_block_start: r.read_u32::<LittleEndian>().map_err(eof)?,
            link_count: r.read_u32::<LittleEndian>().map_err(eof)?,
            listing_size: r.read_u16::<LittleEndian>().map_err(eof)?,
            dir_block_offset: r.read_u16::<LittleEndian>().map_err(eof)?,
            parent_inode: r.read_u32::<LittleEndian>().map_err(eof)?,
        },
        kind::EXT_DIR => {
            let link_count = r.read_u32::<LittleEndian>().map_err(eof)?;
            let listing_size = r.read_u32::<LittleEndian>().map_err(eof)?;
            let dir_block_start = r.read_u32::<LittleEndian>().map_err(eof)?;
            let parent_inode = r.read_u32::<LittleEndian>().map_err(eof)?;
            let index_count = r.read_u16::<LittleEndian>().map_err(eof)?;
            let dir_block_offset = r.read_u16::<LittleEndian>().map_err(eof)?;
            let xattr_index = r.read_u32::<LittleEndian>().map_err(eof)?;
            if xattr_index != XATTR_NONE {
                return Err(Error::XattrsUnsupported(inode_number));
            }
            // Index records are an optional lookup accelerator; consume and
            // ignore them so sequential decoding stays aligned.
            for _ in 0..index_count {
                let _pos = r.read_u32::<LittleEndian>().map_err(eof)?;
                let _start = r.read_u32::<LittleEndian>().map_err(eof)?;
                let name_len = r.read_u32::<LittleEndian>().map_err(eof)? as usize + 1;
                let mut name = vec![0u8; name_len];
                r.read_exact(&mut name).map_err(eof)?;
            }
            InodePayload::ExtDir {
                link_count,
                listing_size,
                dir_block_start,
                parent_inode,
                dir_block_offset,
            }
        }
        kind::BASIC_FILE => {
            let data_start = r.read_u32::<LittleEndian>().map_err(eof)?;
            let fragment_index = r.read_u32::<LittleEndian>().map_err(eof)?;
            let fragment_offset = r.read_u32::<LittleEndian>().map_err(eof)?;
            let file_size = r.read_u32::<LittleEndian>().map_err(eof)?;
            let n = file_block_count(
                u64::from(file_size),
                block_size,
                fragment_index != FRAGMENT_NONE,
            );
            let mut block_sizes = Vec::with_capacity(n as usize);
            for _ in 0..n {
                block_sizes.push(r.read_u32::<LittleEndian>().map_err(eof)?);
            }
            InodePayload::BasicFile {
                data_start,
                fragment_index,
                fragment_offset,
                file_size,
                block_sizes,
            }
        }
        kind::EXT_FILE => {
            let data_start = r.read_u64::<LittleEndian>().map_err(eof)?;
            let file_size = r.read_u64::<LittleEndian>().map_err(eof)?;
            let sparse_bytes = r.read_u64::<LittleEndian>().map_err(eof)?;
            let link_count = r.read_u32::<LittleEndian>().map_err(eof)?;
            let fragment_index = r.read_u32::<LittleEndian>().map_err(eof)?;
            let fragment_offset = r.read_u32::<LittleEndian>().map_err(eof)?;
            let xattr_index = r.read_u32::<LittleEndian>().map_err(eof)?;
            if xattr_index != XATTR_NONE {
                return Err(Error::XattrsUnsupported(inode_number));
            }
            let n = file_block_count(file_size, block_size, fragment_index != FRAGMENT_NONE);
            let mut block_sizes = Vec::with_capacity(n as usize);
            for _ in 0..n {
                block_sizes.push(r.read_u32::<LittleEndian>().map_err(eof)?);
            }
            InodePayload::ExtFile {
                data_start,
                file_size,
                sparse_bytes,
                link_count,
                fragment_index,
                fragment_offset,
                block_sizes,
            }
        }
        kind::SYMLINK => {
            let link_count = r.read_u32::<LittleEndian>().map_err(eof)?;
            let target_size = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
            if target_size > 65535 {
                return Err(Error::Corrupt(format!(
                    "symlink target of {target_size} bytes in inode {inode_number}"
                )));
            }
            let mut target = vec![0u8; target_size];
            r.read_exact(&mut target).map_err(eof)?;
            InodePayload::Symlink { link_count, target }
        }
        other => return Err(Error::UnsupportedInodeKind(unsupported_kind_name(other))),
    };

    Ok(InodeRecord {
        mode,
        uid_index,
        gid_index,
        mtime,
        inode_number,
        payload,
    })
}

pub fn encode_inode(rec: &InodeRecord) -> Vec<u8> {
    let mut out = Vec::with_capacity(64);
    out.write_u16::<LittleEndian>(rec.kind_tag()).unwrap();
    out.write_u16::<LittleEndian>(rec.mode).unwrap();
    out.write_u16::<LittleEndian>(rec.uid_index).unwrap();
    out.write_u16::<LittleEndian>(rec.gid_index).unwrap();
    out.write_u32::<LittleEndian>(rec.mtime).unwrap();
    out.write_u32::<LittleEndian>(rec.inode_number).unwrap();
    match &rec.payload {
        InodePayload::BasicDir {
            dir_block_start,
            link_count,
            listing_size,
            dir_block_offset,
            parent_inode,
        } => {
            out.write_u32::<LittleEndian>(*dir_block_start).unwrap();
            out.write_u32::<LittleEndian>(*link_count).unwrap();
            out.write_u16::<LittleEndian>(*listing_size).unwrap();
            out.write_u16::<LittleEndian>(*dir_block_offset).unwrap();
            out.write_u32::<LittleEndian>(*parent_inode).unwrap();
        }
        InodePayload::ExtDir {
            link_count,
            listing_size,
            dir_block_start,
            parent_inode,
            dir_block_offset,
        } => {
            out.write_u32::<LittleEndian>(*link_count).unwrap();
            out.write_u32::<LittleEndian>(*listing_size).unwrap();
            out.write_u32::<LittleEndian>(*dir_block_start).unwrap();
            out.write_u32::<LittleEndian>(*parent_inode).unwrap();
            out.write_u16::<LittleEndian>(0).unwrap(); // no index records
            out.write_u16::<LittleEndian>(*dir_block_offset).unwrap();
            out.write_u32::<LittleEndian>(XATTR_NONE).unwrap();
        }
        InodePayload::BasicFile {
            data_start,
            fragment_index,
            fragment_offset,
            file_size,
            block_sizes,
        } => {
            out.write_u32::<LittleEndian>(*data_start).unwrap();
            out.write_u32::<LittleEndian>(*fragment_index).unwrap();
            out.write_u32::<LittleEndian>(*fragment_offset).unwrap();
            out.write_u32::<LittleEndian>(*file_size).unwrap();
            for b in block_sizes {
                out.write_u32::<LittleEndian>(*b).unwrap();
            }
        }
        InodePayload::ExtFile {
            data_start,
            file_size,
            sparse_bytes,
            link_count,
            fragment_index,
            fragment_offset,
            block_sizes,
        } => {
            out.write_u64::<LittleEndian>(*data_start).unwrap();
            out.write_u64::<LittleEndian>(*file_size).unwrap();
            out.write_u64::<LittleEndian>(*sparse_bytes).unwrap();
            out.write_u32::<LittleEndian>(*link_count).unwrap();
            out.write_u32::<LittleEndian>(*fragment_index).unwrap();
            out.write_u32::<LittleEndian>(*fragment_offset).unwrap();
            out.write_u32::<LittleEndian>(XATTR_NONE).unwrap();
            for b in block_sizes {
                out.write_u32::<LittleEndian>(*b).unwrap();
            }
        }
        InodePayload::Symlink { link_count, target } => {
            out.write_u32::<LittleEndian>(*link_count).unwrap();
            out.write_u32::<LittleEndian>(target.len() as u32).unwrap();
            out.extend_from_slice(target);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(payload: InodePayload) -> InodeRecord {
        InodeRecord {
            mode: 0o644,
            uid_index: 0,
            gid_index: 0,
            mtime: 1_600_000_000,
            inode_number: 7,
            payload,
        }
    }

    #[test]
    fn symlink_roundtrip_and_layout() {
        let v = rec(InodePayload::Symlink {
            link_count: 1,
            target: b"../data".to_vec(),
        });
        let bytes = encode_inode(&v);
        // Header 16 bytes, link_count 4, target_size 4, then the target.
        assert_eq!(&bytes[20..24], &7u32.to_le_bytes());
        assert_eq!(&bytes[24..], b"../data");
        assert_eq!(decode_inode(&mut &bytes[..], 131_072).unwrap(), v);
    }

    #[test]
    fn empty_file_has_no_blocks() {
        let v = rec(InodePayload::BasicFile {
            data_start: 0,
            fragment_index: FRAGMENT_NONE,
            fragment_offset: 0,
            file_size: 0,
            block_sizes: vec![],
        });
        let bytes = encode_inode(&v);
        assert_eq!(decode_inode(&mut &bytes[..], 4096).unwrap(), v);
    }

    #[test]
    fn block_count_rules() {
        assert_eq!(file_block_count(0, 4096, false), 0);
        assert_eq!(file_block_count(4096, 4096, false), 1);
        assert_eq!(file_block_count(4097, 4096, false), 2);
        // Tail in a fragment: only full blocks are listed.
        assert_eq!(file_block_count(4097, 4096, true), 1);
        assert_eq!(file_block_count(100, 4096, true), 0);
    }

    #[test]
    fn chardev_rejected_by_name() {
        let mut bytes = encode_inode(&rec(InodePayload::Symlink {
            link_count: 1,
            target: b"x".to_vec(),
        }));
        bytes[0] = 5;
        match decode_inode(&mut &bytes[..], 4096) {
            Err(Error::UnsupportedInodeKind(name)) => assert_eq!(name, "chardev"),
            other => panic!("expected chardev rejection, got {other:?}"),
        }
    }

    #[test]
    fn truncation_detected() {
        let bytes = encode_inode(&rec(InodePayload::BasicFile {
            data_start: 96,
            fragment_index: FRAGMENT_NONE,
            fragment_offset: 0,
            file_size: 5000,
            block_sizes: vec![5000 | crate::format::DATA_UNCOMPRESSED, 904],
        }));
        assert!(matches!(
            decode_inode(&mut &bytes[..bytes.len() - 2], 4096),
            Err(Error::TruncatedInode)
        ));
    }

    #[test]
    fn ext_file_roundtrip() {
        let v = rec(InodePayload::ExtFile {
            data_start: 5 << 32,
            file_size: (4u64 << 32) + 123,
            sparse_bytes: 4096,
            link_count: 1,
            fragment_index: FRAGMENT_NONE,
            fragment_offset: 0,
            block_sizes: vec![0; file_block_count((4u64 << 32) + 123, 1_048_576, false) as usize],
        });
        let bytes = encode_inode(&v);
        assert_eq!(decode_inode(&mut &bytes[..], 1_048_576).unwrap(), v);
    }

    #[test]
    fn ext_inode_with_xattrs_rejected() {
        let v = rec(InodePayload::ExtDir {
            link_count: 2,
            listing_size: 3,
            dir_block_start: 0,
            parent_inode: 8,
            dir_block_offset: 0,
        });
        let mut bytes = encode_inode(&v);
        let at = bytes.len() - 4;
        bytes[at..].copy_from_slice(&5u32.to_le_bytes());
        assert!(matches!(
            decode_inode(&mut &bytes[..], 4096),
            Err(Error::XattrsUnsupported(7))
        ));
    }
}
