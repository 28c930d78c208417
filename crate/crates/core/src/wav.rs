//! Minimal 16 kHz / 16-bit / mono PCM WAV reader and writer.
//!
//! Sample values map to [-1, 1) by dividing by 32768.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{CodecError, Result};

pub const SAMPLE_RATE: u32 = 16_000;

fn rd_u32(buf: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(buf[at..at + 4].try_into().unwrap())
}

fn rd_u16(buf: &[u8], at: usize) -> u16 {
    u16::from_le_bytes(buf[at..at + 2].try_into().unwrap())
}

/// Read a mono 16-bit PCM WAV file, returning samples in [-1, 1).
pub fn read_wav(path: &Path) -> Result<Vec<f64>> {
    let mut raw = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut raw)?;
    if raw.len() < 12 || &raw[0..4] != b"RIFF" || &raw[8..12] != b"WAVE" {
        return Err(CodecError::InvalidInput(format!(
            "{}: not a RIFF/WAVE file",
            path.display()
        )));
    }
    let mut pos = 12usize;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<(usize, usize)> = None;
    while pos + 8 <= raw.len() {
        let id = &raw[pos..pos + 4];
        let size = rd_u32(&raw, pos + 4) as usize;
        let body = pos + 8;
        if body + size > raw.len() {
            return Err(CodecError::InvalidInput(format!(
                "{}: truncated chunk",
                path.display()
            )));
        }
        match id {
            b"fmt " if size >= 16 => {
                fmt = Some((
                    rd_u16(&raw, body),
                    rd_u16(&raw, body + 2),
                    rd_u32(&raw, body + 4),
                    rd_u16(&raw, body + 14),
                ));
            }
            b"data" => data = Some((body, size)),
            _ => {}
        }
        pos = body + size + (size & 1);
    }
    let (audio_format, channels, rate, bits) = fmt.ok_or_else(|| {
        CodecError::InvalidInput(format!("{}: missing fmt chunk", path.display()))
    })?;
    if audio_format != 1 || channels != 1 || bits != 16 {
        return Err(CodecError::InvalidInput(format!(
            "{}: expected mono 16-bit PCM, got format={} channels={} bits={}",
            path.display(),
            audio_format,
            channels,
            bits
        )));
    }
    if rate != SAMPLE_RATE {
        return Err(CodecError::InvalidInput(format!(
            "{}: expected {} Hz, got {}",
            path.display(),
            SAMPLE_RATE,
            rate
        )));
    }
    let (body, size) = data.ok_or_else(|| {
        CodecError::InvalidInput(format!("{}: missing data chunk", path.display()))
    })?;
    let n = size / 2;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let v = i16::from_le_bytes(raw[body + 2 * i..body + 2 * i + 2].try_into().unwrap());
        out.push(v as f64 / 32768.0);
    }
    Ok(out)
}

/// Write samples (clamped to [-1, 1)) as a mono 16-bit PCM WAV file.
pub fn write_wav(path: &Path, samples: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let data_len = (samples.len() * 2) as u32;
    w.write_all(b"RIFF")?;
    w.write_all(&(36 + data_len).to_le_bytes())?;
    w.write_all(b"WAVE")?;
    w.write_all(b"fmt ")?;
    w.write_all(&16u32.to_le_bytes())?;
    w.write_all(&1u16.to_le_bytes())?; // PCM
    w.write_all(&1u16.to_le_bytes())?; // mono
    w.write_all(&SAMPLE_RATE.to_le_bytes())?;
    w.write_all(&(SAMPLE_RATE * 2).to_le_bytes())?; // byte rate
    w.write_all(&2u16.to_le_bytes())?; // block align
    w.write_all(&16u16.to_le_bytes())?;
    w.write_all(b"data")?;
    w.write_all(&data_len.to_le_bytes())?;
    for &s in samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let x: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.03).sin() * 0.5).collect();
        write_wav(&path, &x).unwrap();
        let y = read_wav(&path).unwrap();
        assert_eq!(x.len(), y.len());
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1.0 / 32768.0);
        }
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.wav");
        std::fs::write(&path, b"not a wav at all").unwrap();
        assert!(read_wav(&path).is_err());
    }
}
