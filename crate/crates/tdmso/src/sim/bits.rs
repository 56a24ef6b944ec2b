//! Bit strings and the codecs protocols use to pack messages: single
//! bits, fixed-width fields, varints, zigzag-signed integers, and
//! splitting a long payload into budget-sized chunks.

use serde::{Deserialize, Serialize};

/// Errors from decoding a bit string.
#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum BitsError {
    /// The reader ran past the end of the payload.
    #[error("bit string exhausted at bit {at} (length {len})")]
    Truncated { at: usize, len: usize },
    /// A varint kept its continuation bit set for too long.
    #[error("varint wider than 64 bits")]
    VarintOverflow,
}

/// An immutable sequence of bits. Equality and hashing are exact: two bit
/// strings are equal iff they have the same length and bits.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BitString {
    bytes: Vec<u8>,
    len: usize,
}

impl BitString {
    pub fn new() -> Self {
        Self::default()
    }

    /// Length in bits.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// The bit at `i` (0-based from the start).
    pub fn bit(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        self.bytes[i / 8] >> (i % 8) & 1 == 1
    }

    fn push(&mut self, b: bool) {
        if self.len.is_multiple_of(8) {
            self.bytes.push(0);
        }
        if b {
            *self.bytes.last_mut().expect("just pushed") |= 1 << (self.len % 8);
        }
        self.len += 1;
    }

    /// Concatenates the chunks back into one payload (inverse of
    /// [`split_chunks`]).
    pub fn concat<'a>(chunks: impl IntoIterator<Item = &'a BitString>) -> BitString {
        let mut out = BitString::new();
        for c in chunks {
            for i in 0..c.len {
                out.push(c.bit(i));
            }
        }
        out
    }
}

/// Splits a payload into ⌈len/budget⌉ chunks of at most `budget` bits, in
/// order. An empty payload yields a single empty chunk (so that "send the
/// payload" always means at least one message).
pub fn split_chunks(payload: &BitString, budget: usize) -> Vec<BitString> {
    assert!(budget > 0, "budget must be positive");
    if payload.is_empty() {
        return vec![BitString::new()];
    }
    let mut out = Vec::with_capacity(payload.len().div_ceil(budget));
    let mut cur = BitString::new();
    for i in 0..payload.len() {
        cur.push(payload.bit(i));
        if cur.len() == budget {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Append-only bit encoder.
#[derive(Debug, Default)]
pub struct BitWriter {
    out: BitString,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_bit(&mut self, b: bool) {
        self.out.push(b);
    }

    /// Writes the low `width` bits of `value`, least significant first.
    pub fn push_bits(&mut self, value: u64, width: usize) {
        debug_assert!(width <= 64);
        debug_assert!(width == 64 || value < 1u64 << width, "value does not fit the width");
        for i in 0..width {
            self.out.push(value >> i & 1 == 1);
        }
    }

    /// Writes an unsigned integer in 7-bit groups, low group first, with a
    /// continuation bit per group: small values stay small.
    pub fn push_varint(&mut self, mut v: u64) {
        loop {
            let group = v & 0x7f;
            v >>= 7;
            self.push_bit(v != 0);
            self.push_bits(group, 7);
            if v == 0 {
                return;
            }
        }
    }

    /// Signed integer via zigzag mapping (0, -1, 1, -2, ... → 0, 1, 2, 3, ...).
    pub fn push_signed(&mut self, v: i64) {
        self.push_varint(((v << 1) ^ (v >> 63)) as u64);
    }

    pub fn len(&self) -> usize {
        self.out.len()
    }

    pub fn is_empty(&self) -> bool {
        self.out.is_empty()
    }

    pub fn finish(self) -> BitString {
        self.out
    }
}

/// Sequential bit decoder over a [`BitString`].
#[derive(Debug)]
pub struct BitReader<'a> {
    src: &'a BitString,
    pos: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(src: &'a BitString) -> Self {
        Self { src, pos: 0 }
    }

    /// Bits not yet consumed.
    pub fn remaining(&self) -> usize {
        self.src.len() - self.pos
    }

    pub fn read_bit(&mut self) -> Result<bool, BitsError> {
        if self.pos >= self.src.len() {
            return Err(BitsError::Truncated { at: self.pos, len: self.src.len() });
        }
        let b = self.src.bit(self.pos);
        self.pos += 1;
        Ok(b)
    }

    pub fn read_bits(&mut self, width: usize) -> Result<u64, BitsError> {
        debug_assert!(width <= 64);
        let mut v = 0u64;
        for i in 0..width {
            if self.read_bit()? {
                v |= 1 << i;
            }
        }
        Ok(v)
    }

    pub fn read_varint(&mut self) -> Result<u64, BitsError> {
        let mut v = 0u64;
        for shift in (0..).step_by(7) {
            if shift >= 64 {
                return Err(BitsError::VarintOverflow);
            }
            let more = self.read_bit()?;
            let group = self.read_bits(7)?;
            if shift == 63 && group > 1 {
                return Err(BitsError::VarintOverflow);
            }
            v |= group << shift;
            if !more {
                return Ok(v);
            }
        }
        unreachable!("loop exits via return")
    }

    pub fn read_signed(&mut self) -> Result<i64, BitsError> {
        let z = self.read_varint()?;
        Ok((z >> 1) as i64 ^ -((z & 1) as i64))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fixed_width_fields_round_trip() {
        let mut w = BitWriter::new();
        w.push_bits(0b1011, 4);
        w.push_bit(true);
        w.push_bits(0, 0);
        w.push_bits(u64::MAX, 64);
        let s = w.finish();
        assert_eq!(s.len(), 69);
        let mut r = BitReader::new(&s);
        assert_eq!(r.read_bits(4).unwrap(), 0b1011);
        assert!(r.read_bit().unwrap());
        assert_eq!(r.read_bits(64).unwrap(), u64::MAX);
        assert_eq!(r.remaining(), 0);
        assert_eq!(r.read_bit(), Err(BitsError::Truncated { at: 69, len: 69 }));
    }

    #[test]
    fn varints_round_trip_over_random_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xB175);
        let mut values = vec![0u64, 1, 127, 128, u64::MAX];
        for _ in 0..200 {
            values.push(rng.random::<u64>() >> rng.random_range(0..64));
        }
        let mut w = BitWriter::new();
        for &v in &values {
            w.push_varint(v);
        }
        let s = w.finish();
        let mut r = BitReader::new(&s);
        for &v in &values {
            assert_eq!(r.read_varint().unwrap(), v);
        }
        assert_eq!(r.remaining(), 0);
    }

    #[test]
    fn signed_values_round_trip_and_small_magnitudes_stay_small() {
        let mut w = BitWriter::new();
        for v in [0i64, -1, 1, -64, 63, i64::MIN, i64::MAX] {
            w.push_signed(v);
        }
        let s = w.finish();
        let mut r = BitReader::new(&s);
        for v in [0i64, -1, 1, -64, 63, i64::MIN, i64::MAX] {
            assert_eq!(r.read_signed().unwrap(), v);
        }

        let mut w = BitWriter::new();
        w.push_signed(-3);
        assert_eq!(w.finish().len(), 8, "one varint group for a tiny magnitude");
    }

    #[test]
    fn chunking_has_exact_ceiling_counts_and_reassembles() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xC4A2);
        for len in [0usize, 1, 63, 64, 65, 192, 193, 1000] {
            let mut w = BitWriter::new();
            for _ in 0..len {
                w.push_bit(rng.random_bool(0.5));
            }
            let payload = w.finish();
            let chunks = split_chunks(&payload, 64);
            assert_eq!(chunks.len(), len.div_ceil(64).max(1), "len={len}");
            assert!(chunks.iter().all(|c| c.len() <= 64));
            assert_eq!(BitString::concat(&chunks), payload, "len={len}");
        }
        // a payload of exactly 3B+1 bits takes 4 chunks
        let mut w = BitWriter::new();
        for i in 0..(3 * 64 + 1) {
            w.push_bit(i % 3 == 0);
        }
        assert_eq!(split_chunks(&w.finish(), 64).len(), 4);
    }
}
