//! The `.nwc` container: a self-contained, versioned bitstream holding frame
//! geometry, per-module quantizer tables and Huffman codebooks, normalization
//! metadata, and the concatenated per-frame payload bits.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "NWCC" | version u16 | sample_rate u32 | frame_len u16 | overlap u16
//! original_len u64 | norm: degenerate u8, std f64, peak f64
//! module_count u8
//!   per module: kind u8 | num_codes u16 | codes_per_frame u16
//!               centroids num_codes x f32 | code_lengths num_codes x u8
//! num_frames u32 | payload_bits u64 | payload bytes | crc32(payload) u32
//! ```
//!
//! Payload boundaries need no side information: frame f stores, for each
//! module in order, exactly `codes_per_frame` Huffman-coded symbols.

use crate::error::{CodecError, Result};

pub const MAGIC: &[u8; 4] = b"NWCC";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModuleKind {
    /// LPC envelope: indices are quantized line spectral pairs.
    Lpc,
    /// Neural waveform coder stage.
    Nwc,
    /// Pass-through stage (codes map directly to centroid values).
    Identity,
}

impl ModuleKind {
    pub fn to_u8(self) -> u8 {
        match self {
            ModuleKind::Lpc => 0,
            ModuleKind::Nwc => 1,
            ModuleKind::Identity => 2,
        }
    }

    pub fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(ModuleKind::Lpc),
            1 => Ok(ModuleKind::Nwc),
            2 => Ok(ModuleKind::Identity),
            other => Err(CodecError::Bitstream(format!("unknown module kind {}", other))),
        }
    }

    /// Registry name of the residual-coder strategy that decodes this kind.
    pub fn strategy_name(self) -> &'static str {
        match self {
            ModuleKind::Lpc => "lpc",
            ModuleKind::Nwc => "nwc",
            ModuleKind::Identity => "identity",
        }
    }
}

/// Everything a receiver needs to decode one module's code stream.
#[derive(Debug, Clone, PartialEq)]
pub struct ModuleDescriptor {
    pub kind: ModuleKind,
    pub codes_per_frame: u16,
    /// Quantizer centroid table.
    pub centroids: Vec<f32>,
    /// Canonical Huffman code lengths, one per centroid.
    pub code_lengths: Vec<u8>,
}

/// Utterance normalization factors recorded for exact inversion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormDescriptor {
    pub std: f64,
    pub peak: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub sample_rate: u32,
    pub frame_len: u16,
    pub overlap: u16,
    /// Original signal length in samples (decoder trims padding to this).
    pub original_len: u64,
    pub norm: NormDescriptor,
    pub modules: Vec<ModuleDescriptor>,
    pub num_frames: u32,
    pub payload_bits: u64,
    pub payload: Vec<u8>,
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(CodecError::Bitstream(format!(
                "container truncated at byte {} (need {} more)",
                self.pos, n
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

impl Container {
    /// Payload-only bitrate in bits/second (header overhead excluded).
    pub fn bitrate_bps(&self) -> f64 {
        if self.num_frames == 0 {
            return 0.0;
        }
        let bits_per_frame = self.payload_bits as f64 / self.num_frames as f64;
        bits_per_frame * self.sample_rate as f64 / (self.frame_len - self.overlap) as f64
    }

    pub fn bits_per_frame(&self) -> f64 {
        if self.num_frames == 0 {
            return 0.0;
        }
        self.payload_bits as f64 / self.num_frames as f64
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.modules.len() > u8::MAX as usize {
            return Err(CodecError::InvalidInput("too many modules".into()));
        }
        let payload_bytes = self.payload_bits.div_ceil(8) as usize;
        if payload_bytes != self.payload.len() {
            return Err(CodecError::InvalidInput(format!(
                "payload of {} bytes does not match declared {} bits",
                self.payload.len(),
                self.payload_bits
            )));
        }
        let mut w = Writer { buf: Vec::new() };
        w.buf.extend_from_slice(MAGIC);
        w.u16(VERSION);
        w.u32(self.sample_rate);
        w.u16(self.frame_len);
        w.u16(self.overlap);
        w.u64(self.original_len);
        w.u8(self.norm.degenerate as u8);
        w.f64(self.norm.std);
        w.f64(self.norm.peak);
        w.u8(self.modules.len() as u8);
        for m in &self.modules {
            if m.centroids.len() != m.code_lengths.len() || m.centroids.len() > u16::MAX as usize {
                return Err(CodecError::InvalidInput("module table size mismatch".into()));
            }
            w.u8(m.kind.to_u8());
            w.u16(m.centroids.len() as u16);
            w.u16(m.codes_per_frame);
            for &c in &m.centroids {
                w.f32(c);
            }
            w.buf.extend_from_slice(&m.code_lengths);
        }
        w.u32(self.num_frames);
        w.u64(self.payload_bits);
        w.buf.extend_from_slice(&self.payload);
        w.u32(crc32fast::hash(&self.payload));
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(CodecError::Bitstream("bad magic (not an .nwc container)".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(CodecError::Bitstream(format!(
                "unsupported container version {} (expected {})",
                version, VERSION
            )));
        }
        let sample_rate = r.u32()?;
        let frame_len = r.u16()?;
        let overlap = r.u16()?;
        if overlap >= frame_len {
            return Err(CodecError::Bitstream("overlap must be smaller than frame length".into()));
        }
        let original_len = r.u64()?;
        let degenerate = match r.u8()? {
            0 => false,
            1 => true,
            other => {
                return Err(CodecError::Bitstream(format!("bad normalization flag {}", other)))
            }
        };
        let std = r.f64()?;
        let peak = r.f64()?;
        let module_count = r.u8()? as usize;
        let mut modules = Vec::with_capacity(module_count);
        for _ in 0..module_count {
            let kind = ModuleKind::from_u8(r.u8()?)?;
            let num_codes = r.u16()? as usize;
            let codes_per_frame = r.u16()?;
            let mut centroids = Vec::with_capacity(num_codes);
            for _ in 0..num_codes {
                centroids.push(r.f32()?);
            }
            let code_lengths = r.take(num_codes)?.to_vec();
            modules.push(ModuleDescriptor { kind, codes_per_frame, centroids, code_lengths });
        }
        let num_frames = r.u32()?;
        let payload_bits = r.u64()?;
        let payload = r.take(payload_bits.div_ceil(8) as usize)?.to_vec();
        let stored_crc = r.u32()?;
        if r.pos != bytes.len() {
            return Err(CodecError::Bitstream(format!(
                "{} trailing bytes after container end",
                bytes.len() - r.pos
            )));
        }
        let actual = crc32fast::hash(&payload);
        if actual != stored_crc {
            return Err(CodecError::Bitstream(format!(
                "payload checksum mismatch: stored {:08x}, computed {:08x}",
                stored_crc, actual
            )));
        }
        Ok(Container {
            sample_rate,
            frame_len,
            overlap,
            original_len,
            norm: NormDescriptor { std, peak, degenerate },
            modules,
            num_frames,
            payload_bits,
            payload,
        })
    }
}
