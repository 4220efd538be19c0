//! Wire format of one face payload: the neighbor-side flux product of a
//! time-integrated elastic block, `9 * F * W` values.

use crate::lts::Span;
use crate::real::Real;

use super::PartitionError;

/// Bytes before the values: element (8), face (1), precision (1), span (16),
/// value count (4).
pub const HEADER_BYTES: usize = 30;

#[derive(Clone, Debug, PartialEq)]
pub struct Payload<R> {
    /// Reader element (global id) and its face.
    pub element: u64,
    pub face: u8,
    /// Time interval the integrated values cover.
    pub span: Span,
    pub values: Vec<R>,
}

impl<R: Real> Payload<R> {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_BYTES + self.values.len() * R::BYTES);
        out.extend_from_slice(&self.element.to_le_bytes());
        out.push(self.face);
        out.push(R::BITS as u8);
        out.extend_from_slice(&self.span.start.to_le_bytes());
        out.extend_from_slice(&self.span.end.to_le_bytes());
        out.extend_from_slice(&(self.values.len() as u32).to_le_bytes());
        for &v in &self.values {
            v.put_le(&mut out);
        }
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self, PartitionError> {
        let bad = |m: &str| PartitionError::Format(format!("payload: {m}"));
        if buf.len() < HEADER_BYTES {
            return Err(bad("truncated header"));
        }
        let u64_at = |i: usize| u64::from_le_bytes(buf[i..i + 8].try_into().unwrap());
        let element = u64_at(0);
        let face = buf[8];
        if buf[9] as u32 != R::BITS {
            return Err(bad(&format!("precision {} bits, expected {}", buf[9], R::BITS)));
        }
        let span = Span::new(u64_at(10), u64_at(18));
        let n = u32::from_le_bytes(buf[26..30].try_into().unwrap()) as usize;
        if buf.len() != HEADER_BYTES + n * R::BYTES {
            return Err(bad("length does not match value count"));
        }
        let values = buf[HEADER_BYTES..].chunks_exact(R::BYTES).map(R::get_le).collect();
        Ok(Self { element, face, span, values })
    }
}
