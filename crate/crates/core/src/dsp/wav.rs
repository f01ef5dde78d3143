//! RIFF/WAVE, PCM 16-bit little-endian, mono.

use std::path::Path;

use super::Waveform;
use crate::error::{Error, Result};

const PCM: u16 = 1;

pub fn encode_wav(wave: &Waveform) -> Vec<u8> {
    let data_len = (wave.samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&wave.sample_rate.to_le_bytes());
    out.extend_from_slice(&(wave.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &wave.samples {
        let q = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn decode_wav(bytes: &[u8]) -> Result<Waveform> {
    let bad = |m: &str| Error::Wav(m.to_string());
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(bad("not a RIFF/WAVE file"));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let u32_at = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
    let mut pos = 12;
    let mut sample_rate = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let len = u32_at(pos + 4) as usize;
        let body = pos + 8;
        if body + len > bytes.len() {
            return Err(bad("chunk runs past end of file"));
        }
        match id {
            b"fmt " => {
                if len < 16 {
                    return Err(bad("fmt chunk too short"));
                }
                let (format, channels, bits) = (u16_at(body), u16_at(body + 2), u16_at(body + 14));
                if format != PCM || bits != 16 {
                    return Err(bad(&format!("only 16-bit PCM is supported (format {format}, {bits} bits)")));
                }
                if channels != 1 {
                    return Err(bad(&format!("only mono is supported, found {channels} channels")));
                }
                sample_rate = Some(u32_at(body + 4));
            }
            b"data" => {
                let rate = sample_rate.ok_or_else(|| bad("data chunk before fmt chunk"))?;
                let samples = bytes[body..body + len - len % 2]
                    .chunks_exact(2)
                    .map(|b| (i16::from_le_bytes([b[0], b[1]]) as f64 / 32767.0).clamp(-1.0, 1.0))
                    .collect();
                return Waveform::new(samples, rate);
            }
            _ => {}
        }
        pos = body + len + len % 2;
    }
    Err(bad("no data chunk"))
}

pub fn write_wav(path: impl AsRef<Path>, wave: &Waveform) -> Result<()> {
    std::fs::write(path, encode_wav(wave))?;
    Ok(())
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    decode_wav(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_within_one_step() {
        let w = Waveform::sine(440.0, 0.9, 0.1, 22050);
        let bytes = encode_wav(&w);
        assert_eq!(&bytes[0..4], b"RIFF");
        assert_eq!(&bytes[8..12], b"WAVE");
        let back = decode_wav(&bytes).unwrap();
        assert_eq!(back.sample_rate, 22050);
        assert_eq!(back.samples.len(), w.samples.len());
        let err = w.samples.iter().zip(&back.samples).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err <= 1.0 / 32767.0);
    }

    #[test]
    fn rejects_stereo() {
        let mut bytes = encode_wav(&Waveform::sine(440.0, 0.5, 0.01, 22050));
        bytes[22] = 2;
        assert!(matches!(decode_wav(&bytes), Err(Error::Wav(_))));
        assert!(decode_wav(b"RIFX").is_err());
    }
}
