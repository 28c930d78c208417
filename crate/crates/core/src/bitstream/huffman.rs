//! Canonical Huffman coding of quantizer indices.
//!
//! Codebooks are built from training-set frequencies, length-limited to
//! [`MAX_CODE_LEN`] bits, and serialized as a bare length table (canonical
//! assignment makes the codes reproducible from lengths alone). Symbols with
//! zero observed frequency still get (long) codes so any index remains
//! encodable.

use std::collections::BinaryHeap;

use crate::bitstream::bits::{BitReader, BitWriter};
use crate::error::{CodecError, Result};

pub const MAX_CODE_LEN: u8 = 24;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HuffmanCodebook {
    lengths: Vec<u8>,
    codes: Vec<u32>,
    // canonical decode tables, indexed by code length
    first_code: [u32; MAX_CODE_LEN as usize + 1],
    first_index: [u32; MAX_CODE_LEN as usize + 1],
    sorted_symbols: Vec<u16>,
}

#[derive(PartialEq, Eq)]
struct HeapNode {
    weight: u64,
    order: usize, // deterministic tie-break
    symbols: Vec<u16>,
}

impl Ord for HeapNode {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // BinaryHeap is a max-heap; invert for min-by-weight
        other.weight.cmp(&self.weight).then(other.order.cmp(&self.order))
    }
}

impl PartialOrd for HeapNode {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl HuffmanCodebook {
    /// Optimal prefix code for the given non-negative frequencies. At least
    /// one frequency must be positive; zero-frequency symbols are floored to
    /// a tiny weight so every symbol stays encodable.
    pub fn from_frequencies(frequencies: &[f64]) -> Result<Self> {
        if frequencies.is_empty() {
            return Err(CodecError::InvalidInput("huffman: empty alphabet".into()));
        }
        if frequencies.iter().any(|&f| !f.is_finite() || f < 0.0) {
            return Err(CodecError::InvalidInput("huffman: frequencies must be finite and non-negative".into()));
        }
        let total: f64 = frequencies.iter().sum();
        if total <= 0.0 {
            return Err(CodecError::InvalidInput("huffman: all frequencies are zero".into()));
        }
        if frequencies.len() == 1 {
            return Self::from_lengths(&[1]);
        }
        // integer weights keep tree construction exactly deterministic;
        // zero-frequency symbols get weight 1 (the minimum)
        let weights: Vec<u64> = frequencies
            .iter()
            .map(|&f| 1 + (f / total * 1e9) as u64)
            .collect();
        let mut lengths = vec![0u8; frequencies.len()];
        let mut heap: BinaryHeap<HeapNode> = weights
            .iter()
            .enumerate()
            .map(|(i, &w)| HeapNode { weight: w, order: i, symbols: vec![i as u16] })
            .collect();
        let mut order = frequencies.len();
        while heap.len() > 1 {
            let a = heap.pop().unwrap();
            let b = heap.pop().unwrap();
            let mut symbols = a.symbols;
            symbols.extend_from_slice(&b.symbols);
            for &s in &symbols {
                lengths[s as usize] += 1;
            }
            heap.push(HeapNode { weight: a.weight + b.weight, order, symbols });
            order += 1;
        }
        // length-limit with Kraft repair: clamp, then lengthen the shortest
        // over-budget contributors until the Kraft sum fits
        for l in &mut lengths {
            if *l > MAX_CODE_LEN {
                *l = MAX_CODE_LEN;
            }
        }
        let kraft = |ls: &[u8]| -> u64 {
            // scaled by 2^MAX_CODE_LEN
            ls.iter().map(|&l| 1u64 << (MAX_CODE_LEN - l)).sum()
        };
        let budget = 1u64 << MAX_CODE_LEN;
        while kraft(&lengths) > budget {
            // lengthen the currently shortest code (costs the least extra bits)
            let i = (0..lengths.len())
                .filter(|&i| lengths[i] < MAX_CODE_LEN)
                .min_by_key(|&i| (lengths[i], i))
                .ok_or_else(|| CodecError::Numerical("huffman: cannot satisfy Kraft inequality".into()))?;
            lengths[i] += 1;
        }
        Self::from_lengths(&lengths)
    }

    /// Rebuild a canonical codebook from its length table.
    pub fn from_lengths(lengths: &[u8]) -> Result<Self> {
        if lengths.is_empty() {
            return Err(CodecError::Bitstream("huffman: empty length table".into()));
        }
        if lengths.iter().any(|&l| l == 0 || l > MAX_CODE_LEN) {
            return Err(CodecError::Bitstream(format!(
                "huffman: code lengths must be in 1..={}",
                MAX_CODE_LEN
            )));
        }
        let kraft: u64 = lengths.iter().map(|&l| 1u64 << (MAX_CODE_LEN - l)).sum();
        if kraft > 1u64 << MAX_CODE_LEN {
            return Err(CodecError::Bitstream("huffman: length table violates the Kraft inequality".into()));
        }
        // canonical order: (length, symbol)
        let mut sorted: Vec<u16> = (0..lengths.len() as u16).collect();
        sorted.sort_by_key(|&s| (lengths[s as usize], s));
        let mut codes = vec![0u32; lengths.len()];
        let mut first_code = [0u32; MAX_CODE_LEN as usize + 1];
        let mut first_index = [0u32; MAX_CODE_LEN as usize + 1];
        let mut code = 0u32;
        let mut prev_len = 0u8;
        for (rank, &sym) in sorted.iter().enumerate() {
            let len = lengths[sym as usize];
            code <<= len - prev_len;
            if len != prev_len {
                for l in prev_len + 1..=len {
                    first_code[l as usize] = code;
                    first_index[l as usize] = rank as u32;
                }
                prev_len = len;
            }
            codes[sym as usize] = code;
            code += 1;
        }
        Ok(HuffmanCodebook {
            lengths: lengths.to_vec(),
            codes,
            first_code,
            first_index,
            sorted_symbols: sorted,
        })
    }

    pub fn num_symbols(&self) -> usize {
        self.lengths.len()
    }

    pub fn lengths(&self) -> &[u8] {
        &self.lengths
    }

    /// Expected code length in bits under a probability distribution.
    pub fn mean_length(&self, probabilities: &[f64]) -> f64 {
        probabilities
            .iter()
            .zip(&self.lengths)
            .map(|(&p, &l)| p * l as f64)
            .sum()
    }

    pub fn encode_into(&self, writer: &mut BitWriter, indices: &[u16]) -> Result<()> {
        for &idx in indices {
            let i = idx as usize;
            if i >= self.lengths.len() {
                return Err(CodecError::InvalidInput(format!(
                    "huffman: symbol {} outside alphabet of {}",
                    idx,
                    self.lengths.len()
                )));
            }
            writer.write_bits(self.codes[i], self.lengths[i]);
        }
        Ok(())
    }

    pub fn decode_from(&self, reader: &mut BitReader, count: usize) -> Result<Vec<u16>> {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let mut code = 0u32;
            let mut len = 0u8;
            loop {
                code = (code << 1) | reader.read_bit()?;
                len += 1;
                if len > MAX_CODE_LEN {
                    return Err(CodecError::Bitstream(format!(
                        "huffman: no code matched after {} bits at position {}",
                        MAX_CODE_LEN,
                        reader.position()
                    )));
                }
                let li = len as usize;
                let offset = code.wrapping_sub(self.first_code[li]);
                let rank = self.first_index[li] as u64 + offset as u64;
                if code >= self.first_code[li] && (rank as usize) < self.sorted_symbols.len() {
                    let sym = self.sorted_symbols[rank as usize];
                    if self.lengths[sym as usize] == len && self.codes[sym as usize] == code {
                        out.push(sym);
                        break;
                    }
                }
            }
        }
        Ok(out)
    }
}
