//! RIFF/WAVE reader and writer for 16-bit PCM mono.

use std::fs;
use std::path::Path;

use super::{io_err, DataError, Result};
use crate::audio::AudioClip;

const PCM: u16 = 1;

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn malformed(offset: usize, detail: impl Into<String>) -> DataError {
    DataError::Malformed {
        offset,
        detail: detail.into(),
    }
}

pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(malformed(0, "missing RIFF/WAVE signature"));
    }
    let riff_end = 8 + u32_at(bytes, 4) as usize;
    if riff_end > bytes.len() {
        return Err(DataError::Truncated {
            what: "RIFF header",
            declared_end: riff_end,
            actual_end: bytes.len(),
        });
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut pos = 12;
    while pos + 8 <= riff_end {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        let end = body + size;
        match id {
            b"fmt " => {
                if size < 16 || end > riff_end {
                    return Err(malformed(pos, format!("fmt chunk of {size} bytes")));
                }
                let format_code = u16_at(bytes, body);
                let channels = u16_at(bytes, body + 2);
                let rate = u32_at(bytes, body + 4);
                let bits = u16_at(bytes, body + 14);
                if format_code != PCM || channels != 1 || bits != 16 {
                    return Err(DataError::Unsupported { format_code, channels, bits });
                }
                let block_align = u16_at(bytes, body + 12);
                if block_align != 2 {
                    return Err(malformed(body + 12, format!("block align {block_align} for 16-bit mono")));
                }
                fmt = Some((format_code, channels, rate, bits));
            }
            b"data" => {
                let Some((_, _, rate, _)) = fmt else {
                    return Err(malformed(pos, "data chunk before fmt chunk"));
                };
                if end > bytes.len() {
                    return Err(DataError::Truncated {
                        what: "data chunk",
                        declared_end: end,
                        actual_end: bytes.len(),
                    });
                }
                if end > riff_end {
                    return Err(DataError::Truncated {
                        what: "RIFF header",
                        declared_end: riff_end,
                        actual_end: end,
                    });
                }
                if size % 2 != 0 {
                    return Err(malformed(pos + 4, format!("odd data size {size} for 16-bit samples")));
                }
                let samples = bytes[body..end]
                    .chunks_exact(2)
                    .map(|c| f64::from(i16::from_le_bytes([c[0], c[1]])) / 32768.0)
                    .collect();
                return Ok(AudioClip::new(samples, rate)?);
            }
            _ => {}
        }
        // Chunks are word aligned.
        pos = end + (size & 1);
    }
    Err(malformed(pos, if fmt.is_none() { "no fmt chunk" } else { "no data chunk" }))
}

/// Samples are clamped to the 16-bit range and rounded to the nearest step.
pub fn encode_wav(clip: &AudioClip) -> Vec<u8> {
    let n = clip.len();
    let data_len = 2 * n;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate_hz().to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate_hz() * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in clip.samples() {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn read_wav(path: &Path) -> Result<AudioClip> {
    decode_wav(&fs::read(path).map_err(io_err(path))?)
}

pub fn write_wav(clip: &AudioClip, path: &Path) -> Result<()> {
    fs::write(path, encode_wav(clip)).map_err(io_err(path))
}
