//! RIFF/WAVE PCM16 mono 16 kHz reading and writing. Nothing else is accepted;
//! there is no resampling or channel mixing.

use std::fs;
use std::path::Path;

use crate::data::manifest::SAMPLE_RATE;
use crate::error::{Result, SerError};

const WAVE_FORMAT_PCM: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    /// Length before any padding or cutting.
    pub original_length: usize,
}

impl Waveform {
    pub fn new(samples: Vec<f64>) -> Waveform {
        let original_length = samples.len();
        Waveform {
            samples,
            sample_rate: SAMPLE_RATE,
            original_length,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

pub fn decode_wav(bytes: &[u8]) -> Result<Waveform> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(SerError::UnsupportedFormat("not a RIFF/WAVE file".into()));
    }
    let mut pos = 12;
    let mut fmt_seen = false;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        let end = body
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| SerError::Malformed("chunk extends past end of file".into()))?;
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(SerError::Malformed("fmt chunk truncated".into()));
                }
                let format = u16_at(bytes, body);
                let channels = u16_at(bytes, body + 2);
                let rate = u32_at(bytes, body + 4);
                let bits = u16_at(bytes, body + 14);
                if format != WAVE_FORMAT_PCM || bits != 16 {
                    return Err(SerError::UnsupportedFormat(format!(
                        "format code {format} with {bits} bits; need PCM16"
                    )));
                }
                if channels != 1 {
                    return Err(SerError::UnsupportedFormat(format!(
                        "{channels} channels; need mono"
                    )));
                }
                if rate != SAMPLE_RATE {
                    return Err(SerError::UnsupportedFormat(format!(
                        "sample rate {rate} Hz; need {SAMPLE_RATE} Hz"
                    )));
                }
                fmt_seen = true;
            }
            b"data" => {
                if !fmt_seen {
                    return Err(SerError::Malformed("data chunk before fmt chunk".into()));
                }
                let samples = bytes[body..end]
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
                    .collect();
                return Ok(Waveform::new(samples));
            }
            _ => {}
        }
        // Chunks are word aligned.
        pos = end + (size & 1);
    }
    Err(SerError::Malformed("no data chunk".into()))
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let bytes = fs::read(path).map_err(|e| SerError::io(path, e))?;
    decode_wav(&bytes)
}

/// Quantizes to PCM16 (`round(x * 32767)`, clamped).
pub fn encode_wav(samples: &[f64]) -> Vec<u8> {
    let data_len = (samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&WAVE_FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&SAMPLE_RATE.to_le_bytes());
    out.extend_from_slice(&(SAMPLE_RATE * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in samples {
        let q = (s * 32767.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn write_wav(path: &Path, samples: &[f64]) -> Result<()> {
    fs::write(path, encode_wav(samples)).map_err(|e| SerError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(format: u16, channels: u16, rate: u32, bits: u16, data: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&(36 + data.len() as u32).to_le_bytes());
        out.extend_from_slice(b"WAVE");
        out.extend_from_slice(b"fmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&format.to_le_bytes());
        out.extend_from_slice(&channels.to_le_bytes());
        out.extend_from_slice(&rate.to_le_bytes());
        out.extend_from_slice(&(rate * channels as u32 * bits as u32 / 8).to_le_bytes());
        out.extend_from_slice(&(channels * bits / 8).to_le_bytes());
        out.extend_from_slice(&bits.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&(data.len() as u32).to_le_bytes());
        out.extend_from_slice(data);
        out
    }

    #[test]
    fn zero_file_decodes_to_zeros() {
        let w = decode_wav(&header(1, 1, 16000, 16, &[0u8; 320])).unwrap();
        assert_eq!(w.samples, vec![0.0; 160]);
        assert_eq!(w.original_length, 160);
    }

    #[test]
    fn most_negative_sample_is_minus_one() {
        let data = i16::MIN.to_le_bytes();
        let w = decode_wav(&header(1, 1, 16000, 16, &data)).unwrap();
        assert_eq!(w.samples, vec![-1.0]);
    }

    #[test]
    fn stereo_rejected() {
        let r = decode_wav(&header(1, 2, 16000, 16, &[0u8; 8]));
        assert!(matches!(r, Err(SerError::UnsupportedFormat(_))));
    }

    #[test]
    fn wrong_rate_and_encoding_rejected() {
        assert!(matches!(
            decode_wav(&header(1, 1, 44100, 16, &[0u8; 4])),
            Err(SerError::UnsupportedFormat(_))
        ));
        assert!(matches!(
            decode_wav(&header(3, 1, 16000, 32, &[0u8; 8])),
            Err(SerError::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn skips_unknown_chunks() {
        let mut bytes = header(1, 1, 16000, 16, &[1, 0, 2, 0]);
        // Splice a LIST chunk (odd size, padded) between fmt and data.
        let list = [b"LIST".as_slice(), &3u32.to_le_bytes(), &[9, 9, 9, 0]].concat();
        bytes.splice(36..36, list);
        let w = decode_wav(&bytes).unwrap();
        assert_eq!(w.samples, vec![1.0 / 32768.0, 2.0 / 32768.0]);
    }

    #[test]
    fn encode_decode_quantization_error_bounded() {
        let samples: Vec<f64> = (0..1000).map(|i| ((i as f64) * 0.01).sin() * 0.9).collect();
        let back = decode_wav(&encode_wav(&samples)).unwrap();
        for (a, b) in samples.iter().zip(&back.samples) {
            assert!((a - b).abs() < 1.0 / 16000.0);
        }
    }
}
