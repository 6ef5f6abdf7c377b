//! Mono RIFF/WAVE: 16-bit PCM and 32-bit IEEE float.

use std::path::Path;

use crate::dsp::AudioSegment;
use crate::error::{Error, Result};

use super::atomic_write;

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

/// Reads a mono WAV file; integer samples are divided by 32768. The
/// utterance id is the file stem.
pub fn load_wav(path: &Path) -> Result<AudioSegment> {
    let bytes = std::fs::read(path)?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_wav(&bytes, &id).map_err(|e| match e {
        Error::Truncated(m) => Error::Truncated(format!("{}: {m}", path.display())),
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub(crate) fn decode_wav(b: &[u8], id: &str) -> Result<AudioSegment> {
    if b.len() < 12 {
        return Err(Error::Truncated("RIFF header".into()));
    }
    if &b[0..4] != b"RIFF" || &b[8..12] != b"WAVE" {
        return Err(Error::Format("not a RIFF/WAVE file".into()));
    }
    let mut at = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    while at + 8 <= b.len() {
        let tag = &b[at..at + 4];
        let size = u32_at(b, at + 4) as usize;
        let body = at + 8;
        if body + size > b.len() {
            return Err(Error::Truncated(format!(
                "chunk {:?} declares {size} bytes, {} remain",
                String::from_utf8_lossy(tag),
                b.len() - body
            )));
        }
        match tag {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::Format(format!("fmt chunk of {size} bytes")));
                }
                let mut format = u16_at(b, body);
                if format == FORMAT_EXTENSIBLE && size >= 26 {
                    format = u16_at(b, body + 24);
                }
                fmt = Some((format, u16_at(b, body + 2), u32_at(b, body + 4), u16_at(b, body + 14)));
            }
            b"data" => data = Some(&b[body..body + size]),
            _ => {}
        }
        at = body + size + (size & 1);
    }
    let (format, channels, rate, bits) = fmt.ok_or_else(|| Error::Format("missing fmt chunk".into()))?;
    let data = data.ok_or_else(|| Error::Format("missing data chunk".into()))?;
    if channels != 1 {
        return Err(Error::UnsupportedWav {
            field: "channels",
            value: channels.to_string(),
        });
    }
    if rate == 0 {
        return Err(Error::UnsupportedWav {
            field: "sample_rate",
            value: "0".into(),
        });
    }
    let samples: Vec<f64> = match (format, bits) {
        (FORMAT_PCM, 16) => {
            if data.len() % 2 != 0 {
                return Err(Error::Truncated("odd number of bytes in 16-bit data".into()));
            }
            data.chunks_exact(2)
                .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
                .collect()
        }
        (FORMAT_FLOAT, 32) => {
            if data.len() % 4 != 0 {
                return Err(Error::Truncated("partial float sample in data".into()));
            }
            data.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect()
        }
        (FORMAT_PCM | FORMAT_FLOAT, bits) => {
            return Err(Error::UnsupportedWav {
                field: "bits_per_sample",
                value: bits.to_string(),
            })
        }
        (format, _) => {
            return Err(Error::UnsupportedWav {
                field: "audio_format",
                value: format.to_string(),
            })
        }
    };
    if samples.is_empty() {
        return Err(Error::EmptySignal);
    }
    Ok(AudioSegment::new(id, samples, rate))
}

fn header(format: u16, bits: u16, rate: u32, data_len: usize) -> Vec<u8> {
    let block = bits / 8;
    let mut h = Vec::with_capacity(44);
    h.extend_from_slice(b"RIFF");
    h.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    h.extend_from_slice(b"WAVEfmt ");
    h.extend_from_slice(&16u32.to_le_bytes());
    h.extend_from_slice(&format.to_le_bytes());
    h.extend_from_slice(&1u16.to_le_bytes());
    h.extend_from_slice(&rate.to_le_bytes());
    h.extend_from_slice(&(rate * block as u32).to_le_bytes());
    h.extend_from_slice(&block.to_le_bytes());
    h.extend_from_slice(&bits.to_le_bytes());
    h.extend_from_slice(b"data");
    h.extend_from_slice(&(data_len as u32).to_le_bytes());
    h
}

/// 16-bit PCM; samples are scaled by 32768 and clipped.
pub fn write_wav_pcm16(path: &Path, x: &AudioSegment) -> Result<()> {
    let mut data = Vec::with_capacity(2 * x.samples.len());
    for &s in &x.samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        data.extend_from_slice(&v.to_le_bytes());
    }
    let mut bytes = header(FORMAT_PCM, 16, x.sample_rate_hz, data.len());
    bytes.extend_from_slice(&data);
    atomic_write(path, |w| Ok(w.write_all(&bytes)?))
}

pub fn write_wav_f32(path: &Path, x: &AudioSegment) -> Result<()> {
    let mut data = Vec::with_capacity(4 * x.samples.len());
    for &s in &x.samples {
        data.extend_from_slice(&(s as f32).to_le_bytes());
    }
    let mut bytes = header(FORMAT_FLOAT, 32, x.sample_rate_hz, data.len());
    bytes.extend_from_slice(&data);
    atomic_write(path, |w| Ok(w.write_all(&bytes)?))
}
