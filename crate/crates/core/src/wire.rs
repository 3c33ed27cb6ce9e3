//! Byte layout of uplink frames.
//!
//! A frame is a 32-byte little-endian header followed by the packed codes and
//! one byte per label:
//!
//! | offset | size | field |
//! |-------:|-----:|-------|
//! | 0  | 4 | magic `ESPL` |
//! | 4  | 1 | version |
//! | 5  | 1 | kind (1 features, 2 raw input, 3 end of stream) |
//! | 6  | 1 | bit width |
//! | 7  | 1 | reserved, zero |
//! | 8  | 4 | batch id |
//! | 12 | 8 | N, C, H, W as u16 |
//! | 20 | 4 | scale, IEEE-754 single |
//! | 24 | 4 | label count (0 or N) |
//! | 28 | 4 | payload length in bytes |
//!
//! Codes are packed least-significant bit first, so two 4-bit codes share a
//! byte with the first code in the low nibble.

use crate::error::WireError;
use crate::quant::{max_level, QuantizedBatch};

pub const MAGIC: u32 = u32::from_le_bytes(*b"ESPL");
pub const VERSION: u8 = 1;
pub const HEADER_BYTES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum FrameKind {
    /// Quantized post-compression features.
    Features = 1,
    /// Raw 8-bit input pixels (full-cloud mode only).
    RawInput = 2,
    /// End of stream; carries no payload.
    End = 3,
}

impl FrameKind {
    fn from_byte(b: u8) -> Result<Self, WireError> {
        match b {
            1 => Ok(FrameKind::Features),
            2 => Ok(FrameKind::RawInput),
            3 => Ok(FrameKind::End),
            other => Err(WireError::BadKind(other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub kind: FrameKind,
    pub batch: QuantizedBatch,
    pub labels: Vec<u8>,
}

/// Bytes needed to pack `count` codes of `bit_width` bits.
pub fn packed_len(count: usize, bit_width: u8) -> usize {
    (count * bit_width as usize).div_ceil(8)
}

fn pack(codes: &[u8], bit_width: u8, out: &mut Vec<u8>) {
    let start = out.len();
    out.resize(start + packed_len(codes.len(), bit_width), 0);
    let packed = &mut out[start..];
    let b = bit_width as usize;
    for (i, &code) in codes.iter().enumerate() {
        let bit = i * b;
        let (byte, shift) = (bit / 8, bit % 8);
        let wide = (code as u16) << shift;
        packed[byte] |= wide as u8;
        if shift + b > 8 {
            packed[byte + 1] |= (wide >> 8) as u8;
        }
    }
}

fn unpack(packed: &[u8], count: usize, bit_width: u8) -> Vec<u8> {
    let b = bit_width as usize;
    let mask = (1u16 << b) - 1;
    (0..count)
        .map(|i| {
            let bit = i * b;
            let (byte, shift) = (bit / 8, bit % 8);
            let mut wide = packed[byte] as u16;
            if shift + b > 8 {
                wide |= (packed[byte + 1] as u16) << 8;
            }
            ((wide >> shift) & mask) as u8
        })
        .collect()
}

impl Frame {
    pub fn features(batch: QuantizedBatch, labels: Vec<u8>) -> Self {
        Frame { kind: FrameKind::Features, batch, labels }
    }

    /// Raw 8-bit pixels; the scale field records `1/255`.
    pub fn raw_input(pixels: Vec<u8>, shape: [usize; 4], labels: Vec<u8>, batch_id: u32) -> Self {
        let batch = QuantizedBatch { shape, codes: pixels, scale: 1.0 / 255.0, bit_width: 8, batch_id };
        Frame { kind: FrameKind::RawInput, batch, labels }
    }

    pub fn end(batch_id: u32) -> Self {
        let batch = QuantizedBatch { shape: [0; 4], codes: Vec::new(), scale: 0.0, bit_width: 8, batch_id };
        Frame { kind: FrameKind::End, batch, labels: Vec::new() }
    }

    pub fn payload_len(&self) -> usize {
        packed_len(self.batch.codes.len(), self.batch.bit_width) + self.labels.len()
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_BYTES + self.payload_len()
    }

    /// Bits of the payload codes: elements × bit width.
    pub fn feature_bits(&self) -> u64 {
        self.batch.feature_bits()
    }

    /// Header, label and packing-pad bits.
    pub fn overhead_bits(&self) -> u64 {
        self.encoded_len() as u64 * 8 - self.feature_bits()
    }

    fn validate(&self) -> Result<(), WireError> {
        let q = &self.batch;
        if self.kind == FrameKind::End {
            return if q.codes.is_empty() && self.labels.is_empty() { Ok(()) } else { Err(WireError::Shape(q.shape.to_vec())) };
        }
        let levels = max_level(q.bit_width)?;
        if q.shape.contains(&0) {
            return Err(WireError::Shape(q.shape.to_vec()));
        }
        if let Some(&d) = q.shape.iter().find(|&&d| d > u16::MAX as usize) {
            return Err(WireError::DimOverflow(d));
        }
        let expected = q.element_count();
        if q.codes.len() != expected {
            return Err(WireError::SizeMismatch { declared: q.codes.len(), expected });
        }
        if let Some(&code) = q.codes.iter().find(|&&c| c > levels) {
            return Err(WireError::CodeRange { code, bits: q.bit_width });
        }
        if !(q.scale.is_finite() && q.scale >= 0.0) {
            return Err(WireError::Scale(q.scale));
        }
        if !(self.labels.is_empty() || self.labels.len() == q.shape[0]) {
            return Err(WireError::LabelCount { labels: self.labels.len(), batch: q.shape[0] });
        }
        Ok(())
    }
}

pub fn encode_frame(frame: &Frame) -> Result<Vec<u8>, WireError> {
    frame.validate()?;
    let q = &frame.batch;
    let mut out = Vec::with_capacity(frame.encoded_len());
    out.extend_from_slice(&MAGIC.to_le_bytes());
    out.extend_from_slice(&[VERSION, frame.kind as u8, q.bit_width, 0]);
    out.extend_from_slice(&q.batch_id.to_le_bytes());
    for d in q.shape {
        out.extend_from_slice(&(d as u16).to_le_bytes());
    }
    out.extend_from_slice(&q.scale.to_le_bytes());
    out.extend_from_slice(&(frame.labels.len() as u32).to_le_bytes());
    out.extend_from_slice(&(frame.payload_len() as u32).to_le_bytes());
    pack(&q.codes, q.bit_width, &mut out);
    out.extend_from_slice(&frame.labels);
    Ok(out)
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

pub fn decode_frame(bytes: &[u8]) -> Result<Frame, WireError> {
    if bytes.len() < HEADER_BYTES {
        return Err(WireError::Truncated { needed: HEADER_BYTES, have: bytes.len() });
    }
    let magic = u32_at(bytes, 0);
    if magic != MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    if bytes[4] != VERSION {
        return Err(WireError::BadVersion(bytes[4]));
    }
    let kind = FrameKind::from_byte(bytes[5])?;
    let bit_width = bytes[6];
    let batch_id = u32_at(bytes, 8);
    let mut shape = [0usize; 4];
    for (i, d) in shape.iter_mut().enumerate() {
        *d = u16::from_le_bytes([bytes[12 + 2 * i], bytes[13 + 2 * i]]) as usize;
    }
    let scale = f32::from_le_bytes(bytes[20..24].try_into().unwrap());
    let label_count = u32_at(bytes, 24) as usize;
    let declared = u32_at(bytes, 28) as usize;

    let count = if kind == FrameKind::End { 0 } else { shape.iter().product() };
    if kind != FrameKind::End {
        max_level(bit_width)?;
    }
    let code_bytes = packed_len(count, bit_width);
    let expected = code_bytes + label_count;
    if declared != expected {
        return Err(WireError::SizeMismatch { declared, expected });
    }
    let have = bytes.len() - HEADER_BYTES;
    if have < declared {
        return Err(WireError::Truncated { needed: HEADER_BYTES + declared, have: bytes.len() });
    }
    if have > declared {
        return Err(WireError::SizeMismatch { declared, expected: have });
    }
    let payload = &bytes[HEADER_BYTES..];
    let codes = unpack(&payload[..code_bytes], count, bit_width);
    let labels = payload[code_bytes..].to_vec();
    let frame = Frame { kind, batch: QuantizedBatch { shape, codes, scale, bit_width, batch_id }, labels };
    frame.validate()?;
    Ok(frame)
}
