//! Signal processing: STFT, mel analysis, target extraction, Griffin-Lim
//! reconstruction and 16-bit WAV I/O. Everything here runs in `f64`.

pub mod griffin_lim;
pub mod mel;
pub mod pitch;
pub mod stft;
pub mod wav;

pub use griffin_lim::{griffin_lim, griffin_lim_traced, GriffinLim};
pub use mel::{frame_energy, hz_to_mel, mel_filterbank, mel_spectrogram, mel_to_hz};
pub use pitch::{estimate_f0, F0_MAX_HZ, F0_MIN_HZ, VOICING_THRESHOLD};
pub use stft::{hann_window, stft, Stft};
pub use wav::{decode_wav, encode_wav, read_wav, write_wav};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrogramConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub win_length: usize,
    pub hop_length: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl Default for SpectrogramConfig {
    fn default() -> Self {
        SpectrogramConfig {
            sample_rate: 22050,
            n_fft: 1024,
            win_length: 1024,
            hop_length: 256,
            n_mels: 80,
            fmin: 0.0,
            fmax: 8000.0,
            log_floor: 1e-5,
        }
    }
}

impl SpectrogramConfig {
    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Frames produced for `len` samples with centered framing.
    pub fn frames_for(&self, len: usize) -> usize {
        1 + len / self.hop_length
    }

    /// Seconds of audio covered by `frames` mel frames.
    pub fn seconds(&self, frames: usize) -> f64 {
        (frames * self.hop_length) as f64 / self.sample_rate as f64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.sample_rate == 0 || self.n_mels == 0 || self.hop_length == 0 {
            return bad("sample_rate, n_mels and hop_length must be positive".into());
        }
        if !(self.hop_length <= self.win_length && self.win_length <= self.n_fft) {
            return bad(format!(
                "need hop <= win <= n_fft, got {} / {} / {}",
                self.hop_length, self.win_length, self.n_fft
            ));
        }
        if !self.n_fft.is_multiple_of(2) {
            return bad("n_fft must be even".into());
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= self.sample_rate as f64 / 2.0) {
            return bad(format!("need 0 <= fmin < fmax <= sr/2, got {} .. {}", self.fmin, self.fmax));
        }
        if !(self.log_floor > 0.0) {
            return bad("log_floor must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("waveform"));
        }
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        Ok(Waveform { samples, sample_rate })
    }

    pub fn seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    /// `amplitude * sin(2 pi f t)` for `seconds` of audio.
    pub fn sine(freq: f64, amplitude: f64, seconds: f64, sample_rate: u32) -> Self {
        let n = (seconds * sample_rate as f64).round() as usize;
        let w = 2.0 * std::f64::consts::PI * freq / sample_rate as f64;
        Waveform {
            samples: (0..n).map(|i| amplitude * (w * i as f64).sin()).collect(),
            sample_rate,
        }
    }
}

/// Frame-major log-mel spectrogram.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram<T: Scalar> {
    /// `(M, n_mels)`.
    pub frames: Tensor<T>,
    pub hop_length: usize,
    pub sample_rate: u32,
}

impl<T: Scalar> MelSpectrogram<T> {
    pub fn new(frames: Tensor<T>, cfg: &SpectrogramConfig) -> Result<Self> {
        let (m, c) = frames.dims2()?;
        if m == 0 {
            return Err(Error::EmptyInput("mel spectrogram"));
        }
        if c != cfg.n_mels {
            return Err(Error::shape("mel spectrogram", frames.shape(), &[m, cfg.n_mels]));
        }
        Ok(MelSpectrogram {
            frames,
            hop_length: cfg.hop_length,
            sample_rate: cfg.sample_rate,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn n_mels(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn seconds(&self) -> f64 {
        (self.n_frames() * self.hop_length) as f64 / self.sample_rate as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let c = SpectrogramConfig::default();
        c.validate().unwrap();
        assert_eq!(c.n_bins(), 513);
        assert_eq!(c.frames_for(22050), 87);
        let bad = SpectrogramConfig { fmax: 12000.0, ..c };
        assert!(bad.validate().is_err());
    }
}
