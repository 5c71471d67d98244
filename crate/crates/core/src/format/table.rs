//! Shared decoder for the ID, fragment and export tables: a raw u64 index of
//! metadata-block locations followed by packed fixed-size entries.

use byteorder::{ByteOrder, LittleEndian};

use crate::error::{Error, Result};
use crate::format::{
    read_metadata_block, Codec, InodeRef, METADATA_BLOCK_SIZE, TABLE_ABSENT,
};
use crate::source::ByteSource;

/// One fragment block: absolute start offset and a data-block size word.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FragmentEntry {
    pub start: u64,
    pub size_word: u32,
}

/// Read `count` entries of `entry_size` bytes from the table whose index
/// sits at `start`. Returns the concatenated entry bytes.
pub fn read_lookup_table(
    src: &dyn ByteSource,
    codec: Codec,
    start: u64,
    entry_size: u32,
    count: u32,
) -> Result<Vec<u8>> {
    let total = u64::from(entry_size) * u64::from(count);
    let block_count = total.div_ceil(METADATA_BLOCK_SIZE as u64);
    let mut index = vec![0u8; (block_count * 8) as usize];
    src.read_exact_at(start, &mut index)
        .map_err(|_| Error::TruncatedTable(format!("index at {start}")))?;
    let mut bytes = Vec::with_capacity(total as usize);
    for i in 0..block_count {
        let at = LittleEndian::read_u64(&index[(i * 8) as usize..(i * 8 + 8) as usize]);
        let (payload, _) = read_metadata_block(src, codec, at)?;
        bytes.extend_from_slice(&payload);
    }
    if (bytes.len() as u64) < total {
        return Err(Error::TruncatedTable(format!(
            "{} bytes decoded, {total} expected",
            bytes.len()
        )));
    }
    bytes.truncate(total as usize);
    Ok(bytes)
}

/// Write fixed-size entries as metadata blocks followed by the u64 index.
/// `table_pos` is the absolute offset the blob will be written at; returns
/// the blob and the offset of the index within it.
pub fn write_lookup_table(entries: &[u8], codec: Codec, table_pos: u64) -> Result<(Vec<u8>, u64)> {
    let mut blob = Vec::new();
    let mut index = Vec::new();
    for chunk in entries.chunks(METADATA_BLOCK_SIZE) {
        let mut block_pos = [0u8; 8];
        LittleEndian::write_u64(&mut block_pos, table_pos + blob.len() as u64);
        index.extend_from_slice(&block_pos);
        let compressed = codec.compress(chunk)?;
        let (word, body) = if compressed.len() < chunk.len() {
            (compressed.len() as u16, compressed.as_slice())
        } else {
            (chunk.len() as u16 | super::METADATA_UNCOMPRESSED, chunk)
        };
        let mut hdr = [0u8; 2];
        LittleEndian::write_u16(&mut hdr, word);
        blob.extend_from_slice(&hdr);
        blob.extend_from_slice(body);
    }
    let index_offset = blob.len() as u64;
    blob.extend_from_slice(&index);
    Ok((blob, index_offset))
}

pub fn read_id_table(src: &dyn ByteSource, codec: Codec, start: u64, count: u16) -> Result<Vec<u32>> {
    if count == 0 {
        return Err(Error::TruncatedTable("id table must not be empty".into()));
    }
    let bytes = read_lookup_table(src, codec, start, 4, u32::from(count))?;
    Ok(bytes.chunks_exact(4).map(LittleEndian::read_u32).collect())
}

pub fn read_fragment_table(
    src: &dyn ByteSource,
    codec: Codec,
    start: u64,
    count: u32,
    block_size: u32,
) -> Result<Vec<FragmentEntry>> {
    if count == 0 || start == TABLE_ABSENT {
        return Ok(Vec::new());
    }
    let bytes = read_lookup_table(src, codec, start, 16, count)?;
    bytes
        .chunks_exact(16)
        .map(|raw| {
            let entry = FragmentEntry {
                start: LittleEndian::read_u64(&raw[0..8]),
                size_word: LittleEndian::read_u32(&raw[8..12]),
            };
            if entry.size_word & 0x00ff_ffff > block_size {
                return Err(Error::Corrupt(format!(
                    "fragment of {} bytes exceeds block size {block_size}",
                    entry.size_word & 0x00ff_ffff
                )));
            }
            Ok(entry)
        })
        .collect()
}

pub fn read_export_table(
    src: &dyn ByteSource,
    codec: Codec,
    start: u64,
    inode_count: u32,
) -> Result<Vec<InodeRef>> {
    if start == TABLE_ABSENT {
        return Ok(Vec::new());
    }
    let bytes = read_lookup_table(src, codec, start, 8, inode_count)?;
    bytes
        .chunks_exact(8)
        .map(|raw| InodeRef::from_u64(LittleEndian::read_u64(raw)))
        .collect()
}
