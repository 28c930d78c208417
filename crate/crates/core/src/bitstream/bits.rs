use crate::error::{CodecError, Result};

/// MSB-first bit accumulator.
#[derive(Debug, Default, Clone)]
pub struct BitWriter {
    bytes: Vec<u8>,
    bit_len: u64,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append the low `count` bits of `value`, most significant first.
    pub fn write_bits(&mut self, value: u32, count: u8) {
        debug_assert!(count <= 32);
        for i in (0..count).rev() {
            let bit = (value >> i) & 1;
            let pos = (self.bit_len % 8) as u8;
            if pos == 0 {
                self.bytes.push(0);
            }
            if bit != 0 {
                *self.bytes.last_mut().unwrap() |= 0x80 >> pos;
            }
            self.bit_len += 1;
        }
    }

    pub fn bit_len(&self) -> u64 {
        self.bit_len
    }

    /// Padded byte payload plus the exact bit count.
    pub fn finish(self) -> (Vec<u8>, u64) {
        (self.bytes, self.bit_len)
    }
}

/// MSB-first bit cursor over a byte slice with an explicit bit budget.
pub struct BitReader<'a> {
    bytes: &'a [u8],
    bit_len: u64,
    pos: u64,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8], bit_len: u64) -> Result<Self> {
        if bit_len > bytes.len() as u64 * 8 {
            return Err(CodecError::Bitstream(format!(
                "declared bit length {} exceeds buffer of {} bytes",
                bit_len,
                bytes.len()
            )));
        }
        Ok(BitReader { bytes, bit_len, pos: 0 })
    }

    pub fn read_bit(&mut self) -> Result<u32> {
        if self.pos >= self.bit_len {
            return Err(CodecError::Bitstream(format!(
                "bit stream exhausted at position {} of {}",
                self.pos, self.bit_len
            )));
        }
        let byte = self.bytes[(self.pos / 8) as usize];
        let bit = (byte >> (7 - (self.pos % 8) as u8)) & 1;
        self.pos += 1;
        Ok(bit as u32)
    }

    pub fn remaining(&self) -> u64 {
        self.bit_len - self.pos
    }

    pub fn position(&self) -> u64 {
        self.pos
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;

    #[test]
    fn round_trip_random_bit_runs() {
        let mut rng = StdRng::seed_from_u64(1);
        let runs: Vec<(u32, u8)> = (0..500)
            .map(|_| {
                let count = rng.random_range(1..=24u8);
                let value = rng.random_range(0..(1u32 << count));
                (value, count)
            })
            .collect();
        let mut w = BitWriter::new();
        for &(v, c) in &runs {
            w.write_bits(v, c);
        }
        let (bytes, bits) = w.finish();
        let mut r = BitReader::new(&bytes, bits).unwrap();
        for &(v, c) in &runs {
            let mut got = 0u32;
            for _ in 0..c {
                got = (got << 1) | r.read_bit().unwrap();
            }
            assert_eq!(got, v);
        }
        assert_eq!(r.remaining(), 0);
        assert!(r.read_bit().is_err());
    }

    #[test]
    fn declared_length_is_enforced() {
        assert!(BitReader::new(&[0u8], 9).is_err());
        let mut r = BitReader::new(&[0xff], 3).unwrap();
        for _ in 0..3 {
            assert_eq!(r.read_bit().unwrap(), 1);
        }
        assert!(r.read_bit().is_err());
    }
}
