//! Metadata blocks: ≤ 8 KiB units behind a u16 header, and streams of
//! records spanning them.

use std::io::{self, Read};
use std::sync::Arc;

use byteorder::{ByteOrder, LittleEndian};

use crate::error::{Error, Result};
use crate::format::{Codec, InodeRef, METADATA_BLOCK_SIZE, METADATA_UNCOMPRESSED};
use crate::source::ByteSource;

/// Read and decode one metadata block at `offset`. Returns the decompressed
/// payload and the number of on-disk bytes consumed (2 + stored length).
pub fn read_metadata_block(
    src: &dyn ByteSource,
    codec: Codec,
    offset: u64,
) -> Result<(Vec<u8>, u64)> {
    let mut hdr = [0u8; 2];
    src.read_exact_at(offset, &mut hdr)
        .map_err(|_| Error::TruncatedBlock(offset))?;
    let word = LittleEndian::read_u16(&hdr);
    let stored_len = (word & 0x7fff) as usize;
    let verbatim = word & METADATA_UNCOMPRESSED != 0;
    let mut stored = vec![0u8; stored_len];
    src.read_exact_at(offset + 2, &mut stored)
        .map_err(|_| Error::TruncatedBlock(offset))?;
    let payload = if verbatim {
        if stored.len() > METADATA_BLOCK_SIZE {
            return Err(Error::OversizeBlock(METADATA_BLOCK_SIZE as u32));
        }
        stored
    } else {
        codec.decompress(&stored, METADATA_BLOCK_SIZE as u32)?
    };
    Ok((payload, 2 + stored_len as u64))
}

/// Incremental writer for a stream of metadata records.
///
/// Records are concatenated and cut into 8 KiB blocks; each block is
/// compressed unless that would grow it. The ref handed back by [`append`]
/// is final at append time: the on-disk start of the block a record begins
/// in only depends on already-completed blocks.
///
/// [`append`]: MetaStreamWriter::append
pub struct MetaStreamWriter {
    codec: Codec,
    pending: Vec<u8>,
    out: Vec<u8>,
}

impl MetaStreamWriter {
    pub fn new(codec: Codec) -> Self {
        MetaStreamWriter {
            codec,
            pending: Vec::with_capacity(2 * METADATA_BLOCK_SIZE),
            out: Vec::new(),
        }
    }

    /// Ref the next appended record will get.
    pub fn next_ref(&self) -> InodeRef {
        InodeRef::new(self.out.len() as u64, self.pending.len() as u16)
    }

    pub fn append(&mut self, record: &[u8]) -> Result<InodeRef> {
        let at = self.next_ref();
        self.pending.extend_from_slice(record);
        while self.pending.len() >= METADATA_BLOCK_SIZE {
            self.flush_block(METADATA_BLOCK_SIZE)?;
        }
        Ok(at)
    }

    fn flush_block(&mut self, n: usize) -> Result<()> {
        let raw: Vec<u8> = self.pending.drain(..n).collect();
        let compressed = self.codec.compress(&raw)?;
        let (word, body) = if compressed.len() < raw.len() {
            (compressed.len() as u16, compressed)
        } else {
            (raw.len() as u16 | METADATA_UNCOMPRESSED, raw)
        };
        let mut hdr = [0u8; 2];
        LittleEndian::write_u16(&mut hdr, word);
        self.out.extend_from_slice(&hdr);
        self.out.extend_from_slice(&body);
        Ok(())
    }

    /// Flush any partial block and return the on-disk stream.
    pub fn finish(mut self) -> Result<Vec<u8>> {
        if !self.pending.is_empty() {
            let n = self.pending.len();
            self.flush_block(n)?;
        }
        Ok(self.out)
    }

    pub fn is_empty(&self) -> bool {
        self.out.is_empty() && self.pending.is_empty()
    }
}

/// Encode `records` as one metadata stream; `refs[i]` addresses the start of
/// record i.
pub fn write_metadata_stream<B: AsRef<[u8]>>(
    records: &[B],
    codec: Codec,
) -> Result<(Vec<u8>, Vec<InodeRef>)> {
    let mut w = MetaStreamWriter::new(codec);
    let mut refs = Vec::with_capacity(records.len());
    for rec in records {
        refs.push(w.append(rec.as_ref())?);
    }
    Ok((w.finish()?, refs))
}

/// Fetches the decoded payload of the metadata block at a region-relative
/// offset, plus the on-disk bytes it consumed.
pub type BlockFetch<'a> = dyn FnMut(u64) -> Result<(Arc<Vec<u8>>, u64)> + 'a;

/// A read cursor over a metadata stream, starting at an [`InodeRef`] and
/// transparently crossing block boundaries.
pub struct MetaCursor<'a> {
    fetch: Box<BlockFetch<'a>>,
    next_block: u64,
    buf: Arc<Vec<u8>>,
    pos: usize,
}

impl<'a> MetaCursor<'a> {
    pub fn new(mut fetch: Box<BlockFetch<'a>>, start: InodeRef) -> Result<Self> {
        let (buf, consumed) = fetch(start.block_start)?;
        let pos = start.intra_offset as usize;
        if pos > buf.len() {
            return Err(Error::Corrupt(format!(
                "ref offset {pos} past end of {}-byte metadata block",
                buf.len()
            )));
        }
        Ok(MetaCursor {
            fetch,
            next_block: start.block_start + consumed,
            buf,
            pos,
        })
    }

    /// Cursor over raw (uncached) reads from a byte source region.
    pub fn direct(
        src: &'a dyn ByteSource,
        codec: Codec,
        region_base: u64,
        start: InodeRef,
    ) -> Result<Self> {
        let fetch = move |rel: u64| {
            let (payload, consumed) = read_metadata_block(src, codec, region_base + rel)?;
            Ok((Arc::new(payload), consumed))
        };
        MetaCursor::new(Box::new(fetch), start)
    }

    fn refill(&mut self) -> Result<()> {
        let (buf, consumed) = (self.fetch)(self.next_block)?;
        self.next_block += consumed;
        self.buf = buf;
        self.pos = 0;
        Ok(())
    }
}

impl Read for MetaCursor<'_> {
    fn read(&mut self, out: &mut [u8]) -> io::Result<usize> {
        if out.is_empty() {
            return Ok(0);
        }
        if self.pos == self.buf.len() {
            self.refill().map_err(io::Error::other)?;
        }
        let n = out.len().min(self.buf.len() - self.pos);
        out[..n].copy_from_slice(&self.buf[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(bytes: &[u8]) -> Vec<u8> {
        bytes.to_vec()
    }

    #[test]
    fn verbatim_header_decodes() {
        // 0x8005 marks 5 stored bytes, "hello".
        let mut img = blob(&[0x05, 0x80]);
        img.extend_from_slice(b"hello");
        let (payload, consumed) = read_metadata_block(&img, Codec::Zlib, 0).unwrap();
        assert_eq!(payload, b"hello");
        assert_eq!(consumed, 7);
    }

    #[test]
    fn truncated_block_detected() {
        // Header claims 5000 bytes, only 100 present.
        let mut img = blob(&[0x88, 0x93]); // 0x9388 = 0x8000 | 5000
        img.extend_from_slice(&vec![0u8; 100]);
        assert!(matches!(
            read_metadata_block(&img, Codec::Zlib, 0),
            Err(Error::TruncatedBlock(0))
        ));
    }

    #[test]
    fn compressed_roundtrip() {
        let records = vec![vec![42u8; 10_000]];
        let (stream, refs) = write_metadata_stream(&records, Codec::Zstd).unwrap();
        assert_eq!(refs, vec![InodeRef::new(0, 0)]);
        let mut cur = MetaCursor::direct(&stream, Codec::Zstd, 0, refs[0]).unwrap();
        let mut back = vec![0u8; 10_000];
        cur.read_exact(&mut back).unwrap();
        assert_eq!(back, records[0]);
    }

    /// Independent splitter: compute each record's ref from sizes alone,
    /// simulating the cut-into-8192-byte-blocks rule and the on-disk layout.
    fn oracle_refs(record_sizes: &[usize], codec: Codec) -> Vec<(u64, u16)> {
        let total: usize = record_sizes.iter().sum();
        let mut content = Vec::with_capacity(total);
        for (i, n) in record_sizes.iter().enumerate() {
            content.extend(std::iter::repeat(i as u8).take(*n));
        }
        // On-disk offset of each full-or-final block.
        let mut disk_offsets = Vec::new();
        let mut disk = 0u64;
        let mut at = 0usize;
        while at < content.len() || (at == 0 && content.is_empty()) {
            if content.is_empty() {
                break;
            }
            let n = (content.len() - at).min(METADATA_BLOCK_SIZE);
            disk_offsets.push(disk);
            let chunk = &content[at..at + n];
            let comp = codec.compress(chunk).unwrap();
            let stored = if comp.len() < n { comp.len() } else { n };
            disk += 2 + stored as u64;
            at += n;
        }
        let mut refs = Vec::new();
        let mut logical = 0usize;
        for n in record_sizes {
            let block = logical / METADATA_BLOCK_SIZE;
            refs.push((disk_offsets[block], (logical % METADATA_BLOCK_SIZE) as u16));
            logical += n;
        }
        refs
    }

    #[test]
    fn refs_match_independent_splitter() {
        let cases: Vec<Vec<usize>> = vec![
            vec![10],
            vec![8000, 8000],
            vec![10_000, 10_000],
            vec![8192, 1, 8191, 20_000],
        ];
        for sizes in cases {
            let records: Vec<Vec<u8>> = sizes
                .iter()
                .enumerate()
                .map(|(i, n)| vec![i as u8; *n])
                .collect();
            for codec in [Codec::Zlib, Codec::Zstd] {
                let (stream, refs) = write_metadata_stream(&records, codec).unwrap();
                let expect = oracle_refs(&sizes, codec);
                let got: Vec<(u64, u16)> =
                    refs.iter().map(|r| (r.block_start, r.intra_offset)).collect();
                assert_eq!(got, expect, "sizes {sizes:?} codec {codec:?}");
                // Records read back byte-exact through their refs.
                for (i, rec) in records.iter().enumerate() {
                    let mut cur = MetaCursor::direct(&stream, codec, 0, refs[i]).unwrap();
                    let mut back = vec![0u8; rec.len()];
                    cur.read_exact(&mut back).unwrap();
                    assert_eq!(&back, rec);
                }
            }
        }
    }

    #[test]
    fn second_record_lands_in_second_block() {
        // Two highly compressible 10 KB records: record 1 starts at logical
        // offset 10000 = block 1, intra 1808; block 1's on-disk start is the
        // stored size of block 0 plus its 2-byte header.
        let records = vec![vec![0u8; 10_000], vec![1u8; 10_000]];
        let (stream, refs) = write_metadata_stream(&records, Codec::Zlib).unwrap();
        assert_eq!(refs[0], InodeRef::new(0, 0));
        assert_eq!(refs[1].intra_offset, 1808);
        let (_, consumed0) = read_metadata_block(&stream, Codec::Zlib, 0).unwrap();
        assert_eq!(refs[1].block_start, consumed0);
    }

    #[test]
    fn same_block_records_share_block_start() {
        let records = vec![vec![0u8; 8000], vec![1u8; 8000]];
        let (_, refs) = write_metadata_stream(&records, Codec::Zlib).unwrap();
        assert_eq!(refs[0], InodeRef::new(0, 0));
        // 8000 < 8192: record 1 still starts inside block 0.
        assert_eq!(refs[1], InodeRef::new(0, 8000));
    }

    #[test]
    fn empty_stream() {
        let (stream, refs) = write_metadata_stream::<Vec<u8>>(&[], Codec::Zlib).unwrap();
        assert!(stream.is_empty());
        assert!(refs.is_empty());
    }

    #[test]
    fn incompressible_block_stored_verbatim() {
        // Pseudo-random bytes don't compress; the block must carry the
        // verbatim bit and the exact payload.
        let mut data = vec![0u8; 4096];
        let mut x: u32 = 0x2545_f491;
        for b in data.iter_mut() {
            x ^= x << 13;
            x ^= x >> 17;
            x ^= x << 5;
            *b = x as u8;
        }
        let (stream, _) = write_metadata_stream(&[&data], Codec::Zlib).unwrap();
        let word = u16::from_le_bytes([stream[0], stream[1]]);
        assert!(word & METADATA_UNCOMPRESSED != 0);
        assert_eq!((word & 0x7fff) as usize, data.len());
        let (payload, _) = read_metadata_block(&stream, Codec::Zlib, 0).unwrap();
        assert_eq!(payload, data);
    }
}
