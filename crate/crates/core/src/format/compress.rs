//! Compression codecs for data and metadata blocks.
//!
//! Only zlib (id 1) and zstd (id 6) are implemented; the other assigned ids
//! are recognized and rejected by name.

use std::io::Read;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Codec {
    Zlib,
    Zstd,
}

impl Codec {
    pub fn from_id(id: u16) -> Result<Codec> {
        match id {
            1 => Ok(Codec::Zlib),
            6 => Ok(Codec::Zstd),
            2 => Err(Error::UnsupportedCompressor("lzma".into())),
            3 => Err(Error::UnsupportedCompressor("lzo".into())),
            4 => Err(Error::UnsupportedCompressor("xz".into())),
            5 => Err(Error::UnsupportedCompressor("lz4".into())),
            other => Err(Error::UnsupportedCompressor(format!("unknown id {other}"))),
        }
    }

    pub fn from_name(name: &str) -> Result<Codec> {
        match name {
            "zlib" | "gzip" => Ok(Codec::Zlib),
            "zstd" => Ok(Codec::Zstd),
            other => Err(Error::UnsupportedCompressor(other.into())),
        }
    }

    pub fn id(self) -> u16 {
        match self {
            Codec::Zlib => 1,
            Codec::Zstd => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Codec::Zlib => "zlib",
            Codec::Zstd => "zstd",
        }
    }

    pub fn compress(self, data: &[u8]) -> Result<Vec<u8>> {
        match self {
            Codec::Zlib => {
                let mut enc = flate2::read::ZlibEncoder::new(data, flate2::Compression::new(9));
                let mut out = Vec::with_capacity(data.len() / 2 + 16);
                enc.read_to_end(&mut out)
                    .map_err(|e| Error::Decompress(format!("zlib compress: {e}")))?;
                Ok(out)
            }
            Codec::Zstd => zstd::bulk::compress(data, 3)
                .map_err(|e| Error::Decompress(format!("zstd compress: {e}"))),
        }
    }

    /// Decompress `data`, failing with [`Error::OversizeBlock`] if the output
    /// would exceed `max_out` bytes.
    pub fn decompress(self, data: &[u8], max_out: u32) -> Result<Vec<u8>> {
        let limit = max_out as u64;
        let mut out = Vec::new();
        let got = match self {
            Codec::Zlib => flate2::read::ZlibDecoder::new(data)
                .take(limit + 1)
                .read_to_end(&mut out),
            Codec::Zstd => zstd::stream::read::Decoder::new(data)
                .and_then(|dec| dec.take(limit + 1).read_to_end(&mut out)),
        }
        .map_err(|e| Error::Decompress(format!("{}: {e}", self.name())))?;
        if got as u64 > limit {
            return Err(Error::OversizeBlock(max_out));
        }
        Ok(out)
    }
}

pub fn codec_compress(codec_id: u16, data: &[u8]) -> Result<Vec<u8>> {
    Codec::from_id(codec_id)?.compress(data)
}

pub fn codec_decompress(codec_id: u16, data: &[u8], max_out: u32) -> Result<Vec<u8>> {
    Codec::from_id(codec_id)?.decompress(data, max_out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_roundtrip() {
        for id in [1u16, 6] {
            let c = codec_compress(id, b"").unwrap();
            assert_eq!(codec_decompress(id, &c, 0).unwrap(), b"");
        }
    }

    #[test]
    fn zeros_compress_small() {
        let data = vec![0u8; 64 * 1024];
        for id in [1u16, 6] {
            let c = codec_compress(id, &data).unwrap();
            assert!(c.len() < 1024, "codec {id} produced {} bytes", c.len());
            assert_eq!(codec_decompress(id, &c, 64 * 1024).unwrap(), data);
        }
    }

    #[test]
    fn rejected_ids_named() {
        for (id, name) in [(2u16, "lzma"), (3, "lzo"), (4, "xz"), (5, "lz4")] {
            match codec_compress(id, b"x") {
                Err(Error::UnsupportedCompressor(n)) => assert_eq!(n, name),
                other => panic!("expected rejection for id {id}, got {other:?}"),
            }
        }
        assert!(matches!(
            codec_compress(99, b"x"),
            Err(Error::UnsupportedCompressor(_))
        ));
    }

    #[test]
    fn corrupt_input_fails() {
        for id in [1u16, 6] {
            assert!(matches!(
                codec_decompress(id, b"\xff\xfe\xfd\xfc", 1024),
                Err(Error::Decompress(_))
            ));
        }
    }

    #[test]
    fn oversize_output_detected() {
        let data = vec![7u8; 4096];
        for id in [1u16, 6] {
            let c = codec_compress(id, &data).unwrap();
            assert!(matches!(
                codec_decompress(id, &c, 100),
                Err(Error::OversizeBlock(100))
            ));
        }
    }
}
