//! Minimal RIFF/WAVE reader and writer for mono 16-bit PCM.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::AudioBuffer;

const PCM16_SCALE: f64 = 32768.0;

/// Reads a mono PCM16 WAV file into a normalized [`AudioBuffer`].
pub fn load_wav<P: AsRef<Path>>(path: P) -> Result<AudioBuffer> {
    let bytes = fs::read(path)?;
    parse_wav(&bytes)
}

fn parse_wav(bytes: &[u8]) -> Result<AudioBuffer> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::MalformedHeader("not a RIFF/WAVE file".into()));
    }

    let mut sample_rate: Option<u32> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_end = pos + 8 + size;
        if body_end > bytes.len() {
            return Err(Error::MalformedHeader(format!(
                "chunk {:?} overruns file",
                String::from_utf8_lossy(id)
            )));
        }
        let body = &bytes[pos + 8..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(Error::MalformedHeader("fmt chunk too small".into()));
                }
                let format = u16::from_le_bytes(body[0..2].try_into().unwrap());
                let channels = u16::from_le_bytes(body[2..4].try_into().unwrap());
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes(body[14..16].try_into().unwrap());
                if format != 1 {
                    return Err(Error::UnsupportedEncoding(format!(
                        "format tag {format}, only PCM (1) supported"
                    )));
                }
                if channels != 1 {
                    return Err(Error::UnsupportedEncoding(format!(
                        "{channels} channels, only mono supported"
                    )));
                }
                if bits != 16 {
                    return Err(Error::UnsupportedEncoding(format!(
                        "{bits}-bit samples, only 16-bit supported"
                    )));
                }
                sample_rate = Some(rate);
            }
            b"data" => data = Some(body),
            _ => {} // skip LIST, fact, etc.
        }
        // chunks are word-aligned
        pos = body_end + (size & 1);
    }

    let sample_rate = sample_rate
        .ok_or_else(|| Error::MalformedHeader("missing fmt chunk".into()))?;
    if sample_rate == 0 {
        return Err(Error::MalformedHeader("zero sample rate".into()));
    }
    let data = data.ok_or_else(|| Error::MalformedHeader("missing data chunk".into()))?;
    if data.is_empty() {
        return Err(Error::EmptyAudio);
    }
    let samples: Vec<f64> = data
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / PCM16_SCALE)
        .collect();
    AudioBuffer::new(samples, sample_rate)
}

/// Writes normalized samples as a mono PCM16 WAV file. Samples are clamped
/// to [-1, 1) before quantization.
pub fn write_wav<P: AsRef<Path>>(path: P, audio: &AudioBuffer) -> Result<()> {
    let n = audio.samples.len();
    let data_size = (n * 2) as u32;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_size).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&audio.sample_rate_hz.to_le_bytes());
    let byte_rate = audio.sample_rate_hz * 2;
    out.extend_from_slice(&byte_rate.to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_size.to_le_bytes());
    for &s in &audio.samples {
        let q = (s * PCM16_SCALE).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}
