use ndarray::Array2;

use super::{low_mask, Packet, Schema};

pub const SEGMENT_BITS: u32 = 16;

/// Model input: a packet header cut into 16-bit chunks, scaled to `[0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f32>);

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }
}

/// Calls `f(chunk_value, chunk_bits)` for every chunk, field order, high
/// chunk first. A field narrower than 16 bits is a single chunk.
#[inline]
fn for_each_chunk(schema: &Schema, packet: &Packet, mut f: impl FnMut(u32, u32)) {
    for (&v, kind) in packet.values().iter().zip(schema.fields()) {
        let width = u32::from(kind.width());
        let chunks = width.div_ceil(SEGMENT_BITS);
        for c in (0..chunks).rev() {
            let shift = c * SEGMENT_BITS;
            let bits = (width - shift).min(SEGMENT_BITS);
            f((v >> shift) & low_mask(bits as u8), bits);
        }
    }
}

/// Integer chunk values before normalisation.
pub fn raw_segments(schema: &Schema, packet: &Packet) -> Vec<u32> {
    let mut out = Vec::with_capacity(schema.segment_count());
    for_each_chunk(schema, packet, |v, _| out.push(v));
    out
}

/// Each chunk is divided by `2^bits` of that chunk, so 16-bit chunks are
/// scaled by `2^16` and a narrow field by its own range.
pub fn segment_header(schema: &Schema, packet: &Packet) -> FeatureVector {
    let mut out = Vec::with_capacity(schema.segment_count());
    for_each_chunk(schema, packet, |v, bits| {
        out.push(v as f32 / (1u64 << bits) as f32)
    });
    FeatureVector(out)
}

/// Row-per-packet feature matrix.
pub fn segment_batch(schema: &Schema, packets: &[Packet]) -> Array2<f32> {
    let k = schema.segment_count();
    let mut data = Vec::with_capacity(k * packets.len());
    for p in packets {
        for_each_chunk(schema, p, |v, bits| {
            data.push(v as f32 / (1u64 << bits) as f32)
        });
    }
    Array2::from_shape_vec((packets.len(), k), data).expect("segment count is fixed per schema")
}
