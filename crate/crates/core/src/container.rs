//! Byte format of a compressed stream.
//!
//! ```text
//! header (48 bytes, little-endian)
//!   0  magic "GEBQ"         4  version u16 = 1    6  dtype u8     7  mode u8
//!   8  flags u8             9  reserved [0; 3]   12  count u64
//!  20  eb_bits u64         28  range_bits u64    36  derived_bits u64
//!  44  block_size u32
//! index
//!  48  block count u64, then one u64 absolute byte offset per block
//! block
//!      ceil(n/64) u64 bitmap words (bit i set = value i stored losslessly)
//!      n LEB128 varints: zigzag(bin) for ABS/NOA, zigzag(k) << 1 | sign for
//!      REL, or the raw bit pattern for lossless values
//! ```
//!
//! See FORMAT.md at the repository root for a worked hex dump.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::DType;
use crate::quantizer::{CodedValue, Mode};

pub const MAGIC: [u8; 4] = *b"GEBQ";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 48;
/// Longest canonical LEB128 encoding of a u64.
pub const MAX_VARINT_LEN: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContainerError {
    #[error("bad magic {0:02x?}, not a GEBQ stream")]
    BadMagic([u8; 4]),
    #[error("unsupported stream version {0} (this build reads version {VERSION})")]
    BadVersion(u16),
    #[error("stream truncated: needed {needed} bytes at offset {offset}, {available} available")]
    TruncatedStream {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("non-canonical varint at byte offset {0}")]
    NonCanonicalVarint(usize),
    #[error("count mismatch: {0}")]
    CountMismatch(String),
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("invalid block index: {0}")]
    InvalidIndex(String),
    #[error("code out of range at byte offset {offset}: {detail}")]
    CodeOutOfRange { offset: usize, detail: String },
    #[error("block {block}: {detail}")]
    InvalidBlock { block: usize, detail: String },
}

/// Header flag bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct StreamFlags(pub u8);

impl StreamFlags {
    /// Stream was produced without double-checking; the bound is not guaranteed.
    pub const DOUBLE_CHECK_DISABLED: u8 = 0b01;
    /// REL stream produced with platform log2/exp2 (not portable).
    pub const LIBRARY_LOG: u8 = 0b10;
    const KNOWN: u8 = Self::DOUBLE_CHECK_DISABLED | Self::LIBRARY_LOG;

    pub fn double_check_disabled(self) -> bool {
        self.0 & Self::DOUBLE_CHECK_DISABLED != 0
    }

    pub fn library_log(self) -> bool {
        self.0 & Self::LIBRARY_LOG != 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamHeader {
    pub dtype: DType,
    pub mode: Mode,
    pub flags: StreamFlags,
    pub count: u64,
    /// binary64 pattern of the user bound.
    pub eb_bits: u64,
    /// binary64 pattern of the NOA range (0 for ABS/REL).
    pub range_bits: u64,
    /// Pattern of `eb2` (ABS/NOA) or `w` (REL) at the stream width, zero-extended.
    pub derived_bits: u64,
    pub block_size: u32,
}

impl StreamHeader {
    pub fn block_count(&self) -> u64 {
        if self.block_size == 0 {
            0
        } else {
            self.count.div_ceil(u64::from(self.block_size))
        }
    }

    /// Number of values in block `index`.
    pub fn block_len(&self, index: u64) -> usize {
        let start = index * u64::from(self.block_size);
        (self.count - start).min(u64::from(self.block_size)) as usize
    }

    pub fn eb(&self) -> f64 {
        f64::from_bits(self.eb_bits)
    }

    pub fn range(&self) -> f64 {
        f64::from_bits(self.range_bits)
    }

    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.dtype.code());
        out.push(self.mode.code());
        out.push(self.flags.0);
        out.extend_from_slice(&[0; 3]);
        out.extend_from_slice(&self.count.to_le_bytes());
        out.extend_from_slice(&self.eb_bits.to_le_bytes());
        out.extend_from_slice(&self.range_bits.to_le_bytes());
        out.extend_from_slice(&self.derived_bits.to_le_bytes());
        out.extend_from_slice(&self.block_size.to_le_bytes());
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, ContainerError> {
        if bytes.len() >= 4 && bytes[..4] != MAGIC {
            return Err(ContainerError::BadMagic(bytes[..4].try_into().unwrap()));
        }
        need(bytes, 0, HEADER_LEN)?;
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(ContainerError::BadVersion(version));
        }
        let dtype = DType::from_code(bytes[6])
            .ok_or_else(|| ContainerError::InvalidHeader(format!("unknown dtype code {}", bytes[6])))?;
        let mode = Mode::from_code(bytes[7])
            .ok_or_else(|| ContainerError::InvalidHeader(format!("unknown mode code {}", bytes[7])))?;
        let flags = bytes[8];
        if flags & !StreamFlags::KNOWN != 0 {
            return Err(ContainerError::InvalidHeader(format!("unknown flag bits {flags:#04x}")));
        }
        if bytes[9..12] != [0; 3] {
            return Err(ContainerError::InvalidHeader("reserved bytes are not zero".into()));
        }
        let header = Self {
            dtype,
            mode,
            flags: StreamFlags(flags),
            count: read_u64(bytes, 12),
            eb_bits: read_u64(bytes, 20),
            range_bits: read_u64(bytes, 28),
            derived_bits: read_u64(bytes, 36),
            block_size: u32::from_le_bytes(bytes[44..48].try_into().unwrap()),
        };
        if header.block_size == 0 {
            return Err(ContainerError::InvalidHeader("block size is zero".into()));
        }
        if dtype == DType::F32 && header.derived_bits > u64::from(u32::MAX) {
            return Err(ContainerError::InvalidHeader("derived constant wider than f32".into()));
        }
        Ok(header)
    }
}

#[inline]
fn read_u64(bytes: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap())
}

#[inline]
fn need(bytes: &[u8], offset: usize, needed: usize) -> Result<(), ContainerError> {
    if bytes.len() < offset || bytes.len() - offset < needed {
        Err(ContainerError::TruncatedStream {
            offset,
            needed,
            available: bytes.len().saturating_sub(offset),
        })
    } else {
        Ok(())
    }
}

#[inline]
pub fn zigzag_encode(v: i64) -> u64 {
    ((v << 1) ^ (v >> 63)) as u64
}

#[inline]
pub fn zigzag_decode(u: u64) -> i64 {
    ((u >> 1) as i64) ^ -((u & 1) as i64)
}

#[inline]
pub fn write_varint(out: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        out.push((v as u8) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

/// Encoded length of `v` in bytes.
#[inline]
pub fn varint_len(v: u64) -> usize {
    (64 - (v | 1).leading_zeros() as usize).div_ceil(7)
}

/// Reads one canonical LEB128 value starting at `*pos`, advancing `*pos`.
#[inline]
pub fn read_varint(bytes: &[u8], pos: &mut usize) -> Result<u64, ContainerError> {
    let start = *pos;
    let mut value = 0u64;
    for i in 0..MAX_VARINT_LEN {
        let Some(&byte) = bytes.get(start + i) else {
            return Err(ContainerError::TruncatedStream {
                offset: start,
                needed: i + 1,
                available: bytes.len() - start,
            });
        };
        let bits = u64::from(byte & 0x7f);
        if i == MAX_VARINT_LEN - 1 && bits > 1 {
            return Err(ContainerError::CodeOutOfRange {
                offset: start,
                detail: "varint exceeds 64 bits".into(),
            });
        }
        value |= bits << (7 * i);
        if byte & 0x80 == 0 {
            if i > 0 && byte == 0 {
                return Err(ContainerError::NonCanonicalVarint(start));
            }
            *pos = start + i + 1;
            return Ok(value);
        }
    }
    Err(ContainerError::CodeOutOfRange {
        offset: start,
        detail: "varint longer than 10 bytes".into(),
    })
}

/// Payload code word for one value (the bitmap carries the lossless flag).
#[inline]
pub fn code_word(mode: Mode, c: CodedValue) -> u64 {
    match c {
        CodedValue::Quantized { bin, negative } => match mode {
            Mode::Rel => (zigzag_encode(bin) << 1) | u64::from(negative),
            Mode::Abs | Mode::Noa => zigzag_encode(bin),
        },
        CodedValue::Lossless { raw } => raw,
    }
}

#[inline]
fn max_bin(dtype: DType) -> i64 {
    match dtype {
        DType::F32 => <f32 as crate::numerics::Scalar>::MAX_BIN,
        DType::F64 => <f64 as crate::numerics::Scalar>::MAX_BIN,
    }
}

#[inline]
fn max_raw(dtype: DType) -> u64 {
    match dtype {
        DType::F32 => u64::from(u32::MAX),
        DType::F64 => u64::MAX,
    }
}

/// Checks that a coded value is representable in a stream of this type.
pub fn check_coded(dtype: DType, c: CodedValue) -> Result<(), String> {
    match c {
        CodedValue::Quantized { bin, .. } => {
            let m = max_bin(dtype);
            if bin >= m || bin <= -m {
                return Err(format!("bin {bin} outside (-{m}, {m})"));
            }
        }
        CodedValue::Lossless { raw } => {
            if raw > max_raw(dtype) {
                return Err(format!("raw pattern {raw:#x} wider than {dtype}"));
            }
        }
    }
    Ok(())
}

/// Serializes one block. `coded` must already satisfy [`check_coded`].
pub fn encode_block(mode: Mode, coded: &[CodedValue]) -> Vec<u8> {
    let mut out = Vec::new();
    encode_block_into(mode, coded.len(), coded.iter().copied(), &mut out);
    out
}

/// Serializes a block of exactly `len` values from an iterator, replacing
/// the contents of `out`.
pub fn encode_block_into(mode: Mode, len: usize, coded: impl Iterator<Item = CodedValue>, out: &mut Vec<u8>) {
    encode_words_into(len, coded.map(|c| (code_word(mode, c), c.is_lossless())), out);
}

/// [`encode_block_into`] over precomputed `(payload word, lossless)` pairs.
pub fn encode_words_into(len: usize, words: impl Iterator<Item = (u64, bool)>, out: &mut Vec<u8>) {
    let n_words = len.div_ceil(64);
    out.clear();
    out.resize(n_words * 8, 0);
    let mut bitmap = 0u64;
    let mut n = 0;
    for (word, lossless) in words {
        bitmap |= u64::from(lossless) << (n % 64);
        write_varint(out, word);
        n += 1;
        if n % 64 == 0 {
            out[(n / 64 - 1) * 8..n / 64 * 8].copy_from_slice(&bitmap.to_le_bytes());
            bitmap = 0;
        }
    }
    assert_eq!(n, len, "iterator length differs from the declared block length");
    if n % 64 != 0 {
        out[(n_words - 1) * 8..n_words * 8].copy_from_slice(&bitmap.to_le_bytes());
    }
}

/// Builds the encoded stream from the header and already-encoded blocks.
pub fn assemble(header: &StreamHeader, blocks: &[Vec<u8>]) -> Vec<u8> {
    debug_assert_eq!(blocks.len() as u64, header.block_count());
    let index_len = 8 + 8 * blocks.len();
    let body: usize = blocks.iter().map(Vec::len).sum();
    let mut out = Vec::with_capacity(HEADER_LEN + index_len + body);
    header.write_to(&mut out);
    out.extend_from_slice(&(blocks.len() as u64).to_le_bytes());
    let mut offset = (HEADER_LEN + index_len) as u64;
    for b in blocks {
        out.extend_from_slice(&offset.to_le_bytes());
        offset += b.len() as u64;
    }
    for b in blocks {
        out.extend_from_slice(b);
    }
    out
}

/// Encodes a full stream from a header and the coded values it describes.
pub fn encode_stream(header: &StreamHeader, coded: &[CodedValue]) -> Result<Vec<u8>, ContainerError> {
    if header.count != coded.len() as u64 {
        return Err(ContainerError::CountMismatch(format!(
            "header says {} values, got {}",
            header.count,
            coded.len()
        )));
    }
    if header.block_size == 0 {
        return Err(ContainerError::InvalidHeader("block size is zero".into()));
    }
    for (i, &c) in coded.iter().enumerate() {
        check_coded(header.dtype, c).map_err(|detail| ContainerError::CodeOutOfRange {
            offset: i,
            detail,
        })?;
    }
    let blocks: Vec<Vec<u8>> = coded
        .chunks(header.block_size as usize)
        .map(|chunk| encode_block(header.mode, chunk))
        .collect();
    Ok(assemble(header, &blocks))
}

/// A parsed header plus validated block index over borrowed stream bytes.
#[derive(Debug, Clone)]
pub struct StreamView<'a> {
    pub header: StreamHeader,
    bytes: &'a [u8],
    offsets: Vec<usize>,
}

impl<'a> StreamView<'a> {
    pub fn parse(bytes: &'a [u8]) -> Result<Self, ContainerError> {
        let header = StreamHeader::parse(bytes)?;
        need(bytes, HEADER_LEN, 8)?;
        let n_blocks = read_u64(bytes, HEADER_LEN);
        if n_blocks != header.block_count() {
            return Err(ContainerError::CountMismatch(format!(
                "index lists {n_blocks} blocks, header implies {}",
                header.block_count()
            )));
        }
        // every block costs an index entry and every value at least one byte,
        // so anything larger cannot fit in the buffer
        let room = (bytes.len() - HEADER_LEN - 8) as u64;
        if n_blocks > room / 8 || header.count > room {
            return Err(ContainerError::TruncatedStream {
                offset: HEADER_LEN + 8,
                needed: n_blocks.saturating_mul(8).max(header.count).min(usize::MAX as u64) as usize,
                available: room as usize,
            });
        }
        let n_blocks = n_blocks as usize;
        let index_end = HEADER_LEN + 8 + 8 * n_blocks;
        need(bytes, HEADER_LEN + 8, 8 * n_blocks)?;

        let mut offsets = Vec::with_capacity(n_blocks);
        let mut prev = index_end as u64;
        for i in 0..n_blocks {
            let off = read_u64(bytes, HEADER_LEN + 8 + 8 * i);
            if (i == 0 && off != index_end as u64) || off < prev {
                return Err(ContainerError::InvalidIndex(format!(
                    "block {i} offset {off} out of order"
                )));
            }
            if off > bytes.len() as u64 {
                return Err(ContainerError::TruncatedStream {
                    offset: off as usize,
                    needed: 1,
                    available: 0,
                });
            }
            prev = off;
            offsets.push(off as usize);
        }
        if n_blocks == 0 && bytes.len() != index_end {
            return Err(ContainerError::InvalidIndex("trailing bytes after empty index".into()));
        }
        Ok(Self { header, bytes, offsets })
    }

    pub fn block_count(&self) -> usize {
        self.offsets.len()
    }

    /// Decodes block `index` into `out` (cleared first).
    pub fn decode_block_into(&self, index: usize, out: &mut Vec<CodedValue>) -> Result<(), ContainerError> {
        let invalid = |detail: String| ContainerError::InvalidBlock { block: index, detail };
        let start = self.offsets[index];
        let end = self.offsets.get(index + 1).copied().unwrap_or(self.bytes.len());
        let region = &self.bytes[..end];
        let n = self.header.block_len(index as u64);
        let words = n.div_ceil(64);

        need(region, start, words * 8)?;
        let mut bitmap = Vec::with_capacity(words);
        for w in 0..words {
            bitmap.push(read_u64(region, start + 8 * w));
        }
        if !n.is_multiple_of(64) {
            let pad = bitmap[words - 1] >> (n % 64);
            if pad != 0 {
                return Err(invalid("bitmap padding bits set".into()));
            }
        }

        let mode = self.header.mode;
        let dtype = self.header.dtype;
        out.clear();
        out.reserve(n);
        let mut pos = start + words * 8;
        for i in 0..n {
            let at = pos;
            let word = read_varint(region, &mut pos)?;
            let coded = if bitmap[i / 64] >> (i % 64) & 1 == 1 {
                CodedValue::Lossless { raw: word }
            } else {
                match mode {
                    Mode::Rel => CodedValue::Quantized {
                        bin: zigzag_decode(word >> 1),
                        negative: word & 1 == 1,
                    },
                    Mode::Abs | Mode::Noa => CodedValue::Quantized {
                        bin: zigzag_decode(word),
                        negative: false,
                    },
                }
            };
            check_coded(dtype, coded)
                .map_err(|detail| ContainerError::CodeOutOfRange { offset: at, detail })?;
            out.push(coded);
        }
        if pos != end {
            return Err(invalid(format!("{} unread bytes at block end", end - pos)));
        }
        Ok(())
    }

    pub fn decode_block(&self, index: usize) -> Result<Vec<CodedValue>, ContainerError> {
        let mut out = Vec::new();
        self.decode_block_into(index, &mut out)?;
        Ok(out)
    }
}

/// Exact inverse of [`encode_stream`].
pub fn decode_stream(bytes: &[u8]) -> Result<(StreamHeader, Vec<CodedValue>), ContainerError> {
    let view = StreamView::parse(bytes)?;
    let mut all = Vec::with_capacity(view.header.count as usize);
    let mut block = Vec::new();
    for i in 0..view.block_count() {
        view.decode_block_into(i, &mut block)?;
        all.extend_from_slice(&block);
    }
    Ok((view.header, all))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn header(dtype: DType, mode: Mode, count: u64, block_size: u32) -> StreamHeader {
        StreamHeader {
            dtype,
            mode,
            flags: StreamFlags::default(),
            count,
            eb_bits: 1e-3f64.to_bits(),
            range_bits: 0,
            derived_bits: u64::from(2e-3f32.to_bits()),
            block_size,
        }
    }

    #[test]
    fn zigzag_values() {
        assert_eq!(zigzag_encode(0), 0);
        assert_eq!(zigzag_encode(-1), 1);
        assert_eq!(zigzag_encode(1), 2);
        assert_eq!(zigzag_encode(-2), 3);
        assert_eq!(zigzag_encode(3), 6);
        assert_eq!(zigzag_encode(i64::MIN), u64::MAX);
        for v in [0, 1, -1, 12345, -98765, i64::MAX, i64::MIN] {
            assert_eq!(zigzag_decode(zigzag_encode(v)), v);
        }
    }

    #[test]
    fn varint_bytes() {
        let mut out = Vec::new();
        write_varint(&mut out, 0);
        write_varint(&mut out, 127);
        write_varint(&mut out, 128);
        write_varint(&mut out, 300);
        assert_eq!(out, [0x00, 0x7f, 0x80, 0x01, 0xac, 0x02]);

        let mut out = Vec::new();
        write_varint(&mut out, u64::MAX);
        assert_eq!(out.len(), 10);
        let mut pos = 0;
        assert_eq!(read_varint(&out, &mut pos).unwrap(), u64::MAX);
        assert_eq!(pos, 10);
    }

    #[test]
    fn varint_rejects_non_canonical_and_overflow() {
        let mut pos = 0;
        assert_eq!(
            read_varint(&[0x80, 0x00], &mut pos),
            Err(ContainerError::NonCanonicalVarint(0))
        );
        let mut pos = 0;
        let eleven = [0xff; 11];
        assert!(matches!(read_varint(&eleven, &mut pos), Err(ContainerError::CodeOutOfRange { .. })));
        let mut pos = 0;
        let mut too_big = [0xff; 10];
        too_big[9] = 0x02;
        assert!(matches!(read_varint(&too_big, &mut pos), Err(ContainerError::CodeOutOfRange { .. })));
        let mut pos = 0;
        assert!(matches!(read_varint(&[0x80], &mut pos), Err(ContainerError::TruncatedStream { .. })));
    }

    #[test]
    fn empty_stream_is_56_bytes() {
        let h = header(DType::F32, Mode::Abs, 0, 4096);
        let bytes = encode_stream(&h, &[]).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 8);
        assert_eq!(&bytes[..4], b"GEBQ");
        assert_eq!(&bytes[48..56], &[0; 8]);
        let (h2, coded) = decode_stream(&bytes).unwrap();
        assert_eq!(h2, h);
        assert!(coded.is_empty());
    }

    #[test]
    fn single_quantized_value_layout() {
        let h = header(DType::F32, Mode::Abs, 1, 4096);
        let bytes = encode_stream(&h, &[CodedValue::Quantized { bin: 3, negative: false }]).unwrap();
        // header, index (count 1 + one offset), bitmap word, varint
        assert_eq!(bytes.len(), 48 + 16 + 8 + 1);
        assert_eq!(u64::from_le_bytes(bytes[56..64].try_into().unwrap()), 64);
        assert_eq!(&bytes[64..72], &[0; 8]);
        assert_eq!(bytes[72], 0x06);
    }

    #[test]
    fn single_lossless_nan_layout() {
        let h = header(DType::F32, Mode::Abs, 1, 4096);
        let bytes = encode_stream(&h, &[CodedValue::Lossless { raw: 0x7FC0_0000 }]).unwrap();
        assert_eq!(u64::from_le_bytes(bytes[64..72].try_into().unwrap()), 1);
        // 2143289344 in LEB128
        assert_eq!(&bytes[72..], &[0x80, 0x80, 0x80, 0xfe, 0x07]);
    }

    #[test]
    fn rel_code_carries_sign() {
        assert_eq!(code_word(Mode::Rel, CodedValue::Quantized { bin: 1, negative: false }), 4);
        assert_eq!(code_word(Mode::Rel, CodedValue::Quantized { bin: 1, negative: true }), 5);
        assert_eq!(code_word(Mode::Rel, CodedValue::Quantized { bin: -1, negative: true }), 3);
        let h = header(DType::F32, Mode::Rel, 3, 2);
        let coded = [
            CodedValue::Quantized { bin: -7, negative: true },
            CodedValue::Lossless { raw: 0x8000_0000 },
            CodedValue::Quantized { bin: 0, negative: true },
        ];
        let bytes = encode_stream(&h, &coded).unwrap();
        assert_eq!(decode_stream(&bytes).unwrap().1, coded);
    }

    #[test]
    fn typed_errors() {
        let h = header(DType::F32, Mode::Abs, 5, 2);
        let coded = vec![CodedValue::Quantized { bin: 100, negative: false }; 5];
        let good = encode_stream(&h, &coded).unwrap();

        let mut bad = good.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert_eq!(decode_stream(&bad).unwrap_err(), ContainerError::BadMagic(*b"XXXX"));

        let mut bad = good.clone();
        bad[4] = 2;
        assert_eq!(decode_stream(&bad).unwrap_err(), ContainerError::BadVersion(2));

        let truncated = &good[..good.len() - 1];
        assert!(matches!(decode_stream(truncated), Err(ContainerError::TruncatedStream { .. })));
        let truncated = &good[..good.len() - 12];
        assert!(matches!(decode_stream(truncated), Err(ContainerError::TruncatedStream { .. })));

        let mut bad = good.clone();
        bad[12] = 9; // count 9 but index lists 3 blocks
        assert!(matches!(decode_stream(&bad), Err(ContainerError::CountMismatch(_))));

        assert!(matches!(decode_stream(&good[..10]), Err(ContainerError::TruncatedStream { .. })));

        let mut longer = good.clone();
        longer.push(0);
        assert!(matches!(decode_stream(&longer), Err(ContainerError::InvalidBlock { .. })));
    }

    #[test]
    fn encode_rejects_out_of_range_bins() {
        let h = header(DType::F32, Mode::Abs, 1, 8);
        let c = [CodedValue::Quantized { bin: 1 << 30, negative: false }];
        assert!(matches!(encode_stream(&h, &c), Err(ContainerError::CodeOutOfRange { .. })));
        let c = [CodedValue::Lossless { raw: 1 << 32 }];
        assert!(matches!(encode_stream(&h, &c), Err(ContainerError::CodeOutOfRange { .. })));
        let h = header(DType::F32, Mode::Abs, 2, 8);
        assert!(matches!(
            encode_stream(&h, &c),
            Err(ContainerError::CountMismatch(_))
        ));
    }

    #[test]
    fn lossless_costs_more_than_small_bins() {
        let h = header(DType::F32, Mode::Abs, 1000, 4096);
        let small = vec![CodedValue::Quantized { bin: -20, negative: false }; 1000];
        let raw = vec![CodedValue::Lossless { raw: 0x3f8c_cccd }; 1000];
        assert!(encode_stream(&h, &raw).unwrap().len() > encode_stream(&h, &small).unwrap().len());
    }

    fn coded_strategy(dtype: DType) -> impl Strategy<Value = CodedValue> {
        let m = max_bin(dtype);
        let raw_max = max_raw(dtype);
        prop_oneof![
            ((-m + 1)..m, any::<bool>()).prop_map(|(bin, negative)| CodedValue::Quantized { bin, negative }),
            (-300i64..300, any::<bool>()).prop_map(|(bin, negative)| CodedValue::Quantized { bin, negative }),
            (0..=raw_max).prop_map(|raw| CodedValue::Lossless { raw }),
        ]
    }

    #[test]
    fn varint_len_matches_encoding() {
        for v in [0, 1, 0x7f, 0x80, 0x3fff, 0x4000, u64::from(u32::MAX), u64::MAX >> 1, u64::MAX] {
            let mut out = Vec::new();
            write_varint(&mut out, v);
            assert_eq!(varint_len(v), out.len(), "{v:#x}");
        }
    }

    proptest! {
        #[test]
        fn roundtrip_rel_f64(
            coded in proptest::collection::vec(coded_strategy(DType::F64), 0..300),
            block in prop_oneof![Just(1u32), Just(2), Just(7), Just(64), Just(4096)],
        ) {
            let h = header(DType::F64, Mode::Rel, coded.len() as u64, block);
            let bytes = encode_stream(&h, &coded).unwrap();
            let (h2, back) = decode_stream(&bytes).unwrap();
            prop_assert_eq!(h2, h);
            prop_assert_eq!(back, coded);
        }

        #[test]
        fn roundtrip_abs_f32(
            coded in proptest::collection::vec(coded_strategy(DType::F32), 0..300)
                .prop_map(|v| v.into_iter().map(|c| match c {
                    CodedValue::Quantized { bin, .. } => CodedValue::Quantized { bin, negative: false },
                    l => l,
                }).collect::<Vec<_>>()),
            block in 1u32..130,
        ) {
            let h = header(DType::F32, Mode::Abs, coded.len() as u64, block);
            let bytes = encode_stream(&h, &coded).unwrap();
            prop_assert_eq!(decode_stream(&bytes).unwrap().1, coded);
        }

        #[test]
        fn mutations_never_panic(seed_pos in any::<usize>(), byte in any::<u8>(), cut in any::<usize>()) {
            let h = header(DType::F32, Mode::Rel, 70, 16);
            let coded: Vec<CodedValue> = (0..70)
                .map(|i| if i % 9 == 0 {
                    CodedValue::Lossless { raw: 0x7fc0_0000 + i }
                } else {
                    CodedValue::Quantized { bin: i as i64 * 37 - 900, negative: i % 2 == 0 }
                })
                .collect();
            let mut bytes = encode_stream(&h, &coded).unwrap();
            let pos = seed_pos % bytes.len();
            bytes[pos] = byte;
            let _ = decode_stream(&bytes);
            let _ = decode_stream(&bytes[..cut % (bytes.len() + 1)]);
        }
    }
}
