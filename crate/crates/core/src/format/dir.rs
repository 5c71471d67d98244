//! Directory listings: header groups of sorted entries.

use std::io::Read;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::format::{DIR_HEADER_MAX_ENTRIES, NAME_MAX};

/// One resolved directory entry: the name, the basic kind tag, and where the
/// child's inode record lives in the inode table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirEntry {
    pub name: Vec<u8>,
    pub kind_tag: u16,
    pub inode_number: u32,
    pub inode_block_start: u32,
    pub intra_offset: u16,
}

fn validate_name(name: &[u8]) -> Result<()> {
    if name.is_empty() {
        return Err(Error::InvalidName("empty name".into()));
    }
    if name.len() > NAME_MAX {
        return Err(Error::NameTooLong);
    }
    if name == b"." || name == b".." {
        return Err(Error::InvalidName(String::from_utf8_lossy(name).into_owned()));
    }
    if name.iter().any(|b| *b == b'/' || *b == 0) {
        return Err(Error::InvalidName(format!(
            "{:?} contains '/' or NUL",
            String::from_utf8_lossy(name)
        )));
    }
    Ok(())
}

/// Encode a listing. Returns the raw bytes and the listing size to store in
/// the directory inode (encoded length + 3; an empty directory is zero bytes
/// with listing size 3).
pub fn encode_dir_listing(entries: &[DirEntry]) -> Result<(Vec<u8>, u32)> {
    for pair in entries.windows(2) {
        if pair[1].name <= pair[0].name {
            return Err(Error::UnsortedEntries);
        }
    }
    let mut out = Vec::new();
    let mut group = 0usize;
    while group < entries.len() {
        let base = &entries[group];
        validate_name(&base.name)?;
        let mut len = 1usize;
        while len < DIR_HEADER_MAX_ENTRIES && group + len < entries.len() {
            let e = &entries[group + len];
            validate_name(&e.name)?;
            if e.inode_block_start != base.inode_block_start {
                break;
            }
            let delta = i64::from(e.inode_number) - i64::from(base.inode_number);
            if i16::try_from(delta).is_err() {
                break;
            }
            len += 1;
        }
        out.write_u32::<LittleEndian>((len - 1) as u32).unwrap();
        out.write_u32::<LittleEndian>(base.inode_block_start).unwrap();
        out.write_u32::<LittleEndian>(base.inode_number).unwrap();
        for e in &entries[group..group + len] {
            let delta = i64::from(e.inode_number) - i64::from(base.inode_number);
            out.write_u16::<LittleEndian>(e.intra_offset).unwrap();
            out.write_i16::<LittleEndian>(delta as i16).unwrap();
            out.write_u16::<LittleEndian>(e.kind_tag).unwrap();
            out.write_u16::<LittleEndian>((e.name.len() - 1) as u16).unwrap();
            out.extend_from_slice(&e.name);
        }
        group += len;
    }
    let listing_size = out.len() as u32 + 3;
    Ok((out, listing_size))
}

/// Decode a listing of `listing_size` (as stored in the directory inode)
/// from a metadata cursor.
pub fn decode_dir_listing(r: &mut impl Read, listing_size: u32) -> Result<Vec<DirEntry>> {
    let eof = |_| Error::TruncatedTable("directory listing".into());
    let total = listing_size
        .checked_sub(3)
        .ok_or_else(|| Error::Corrupt(format!("directory listing size {listing_size} < 3")))?
        as usize;
    let mut entries = Vec::new();
    let mut consumed = 0usize;
    while consumed < total {
        let count = r.read_u32::<LittleEndian>().map_err(eof)? as usize + 1;
        let inode_block_start = r.read_u32::<LittleEndian>().map_err(eof)?;
        let base_inode = r.read_u32::<LittleEndian>().map_err(eof)?;
        consumed += 12;
        if count > DIR_HEADER_MAX_ENTRIES {
            return Err(Error::Corrupt(format!(
                "directory header claims {count} entries"
            )));
        }
        for _ in 0..count {
            let intra_offset = r.read_u16::<LittleEndian>().map_err(eof)?;
            let delta = r.read_i16::<LittleEndian>().map_err(eof)?;
            let kind_tag = r.read_u16::<LittleEndian>().map_err(eof)?;
            let name_len = r.read_u16::<LittleEndian>().map_err(eof)? as usize + 1;
            if name_len > NAME_MAX {
                return Err(Error::NameTooLong);
            }
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name).map_err(eof)?;
            consumed += 8 + name_len;
            validate_name(&name)?;
            let inode_number = i64::from(base_inode) + i64::from(delta);
            let inode_number =
                u32::try_from(inode_number).ok().filter(|n| *n >= 1).ok_or(Error::BadDelta)?;
            if let Some(prev) = entries.last() {
                let prev: &DirEntry = prev;
                if name <= prev.name {
                    return Err(Error::UnsortedEntries);
                }
            }
            entries.push(DirEntry {
                name,
                kind_tag,
                inode_number,
                inode_block_start,
                intra_offset,
            });
        }
    }
    if consumed != total {
        return Err(Error::Corrupt(format!(
            "directory listing consumed {consumed} of {total} bytes"
        )));
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::format::kind;

    fn entry(name: &str, inode: u32, block: u32, off: u16) -> DirEntry {
        DirEntry {
            name: name.as_bytes().to_vec(),
            kind_tag: kind::BASIC_FILE,
            inode_number: inode,
            inode_block_start: block,
            intra_offset: off,
        }
    }

    #[test]
    fn two_entries_one_header() {
        let entries = vec![entry("a", 1, 0, 0), entry("b", 2, 0, 40)];
        let (bytes, size) = encode_dir_listing(&entries).unwrap();
        // One header for consecutive inodes in the same block: count-1 == 1.
        assert_eq!(&bytes[0..4], &1u32.to_le_bytes());
        assert_eq!(size as usize, bytes.len() + 3);
        let back = decode_dir_listing(&mut &bytes[..], size).unwrap();
        assert_eq!(back, entries);
    }

    #[test]
    fn empty_directory() {
        let (bytes, size) = encode_dir_listing(&[]).unwrap();
        assert!(bytes.is_empty());
        assert_eq!(size, 3);
        assert!(decode_dir_listing(&mut &bytes[..], size).unwrap().is_empty());
    }

    #[test]
    fn unsorted_rejected() {
        let entries = vec![entry("b", 1, 0, 0), entry("a", 2, 0, 40)];
        assert!(matches!(
            encode_dir_listing(&entries),
            Err(Error::UnsortedEntries)
        ));
    }

    #[test]
    fn new_header_on_block_change() {
        let entries = vec![entry("a", 1, 0, 0), entry("b", 2, 8194, 0)];
        let (bytes, size) = encode_dir_listing(&entries).unwrap();
        // Two headers of one entry each: 2 * (12 + 8 + 1).
        assert_eq!(bytes.len(), 42);
        assert_eq!(decode_dir_listing(&mut &bytes[..], size).unwrap(), entries);
    }

    #[test]
    fn new_header_on_large_delta() {
        let entries = vec![entry("a", 1, 0, 0), entry("b", 40_000, 0, 40)];
        let (bytes, size) = encode_dir_listing(&entries).unwrap();
        assert_eq!(bytes.len(), 42);
        assert_eq!(decode_dir_listing(&mut &bytes[..], size).unwrap(), entries);
    }

    #[test]
    fn groups_capped_at_256() {
        let entries: Vec<DirEntry> = (0..300)
            .map(|i| entry(&format!("f{i:04}"), i + 1, 0, (i * 20) as u16))
            .collect();
        let (bytes, size) = encode_dir_listing(&entries).unwrap();
        let back = decode_dir_listing(&mut &bytes[..], size).unwrap();
        assert_eq!(back, entries);
        // 300 entries of 8+5 bytes plus two headers.
        assert_eq!(bytes.len(), 300 * 13 + 2 * 12);
    }

    #[test]
    fn deterministic_encoding() {
        let entries: Vec<DirEntry> = (0..50)
            .map(|i| entry(&format!("n{i:03}"), 100 + i, 7, i as u16))
            .collect();
        assert_eq!(
            encode_dir_listing(&entries).unwrap(),
            encode_dir_listing(&entries).unwrap()
        );
    }

    #[test]
    fn bad_names_rejected() {
        assert!(matches!(
            encode_dir_listing(&[entry("a/b", 1, 0, 0)]),
            Err(Error::InvalidName(_))
        ));
        assert!(matches!(
            encode_dir_listing(&[entry("..", 1, 0, 0)]),
            Err(Error::InvalidName(_))
        ));
        let long = "x".repeat(257);
        assert!(matches!(
            encode_dir_listing(&[entry(&long, 1, 0, 0)]),
            Err(Error::NameTooLong)
        ));
    }

    #[test]
    fn negative_delta_underflow_is_bad() {
        let entries = vec![entry("a", 5, 0, 0)];
        let (mut bytes, size) = encode_dir_listing(&entries).unwrap();
        // Rewrite the delta to -6, pushing the inode number below 1.
        bytes[14..16].copy_from_slice(&(-6i16).to_le_bytes());
        assert!(matches!(
            decode_dir_listing(&mut &bytes[..], size),
            Err(Error::BadDelta)
        ));
    }
}
