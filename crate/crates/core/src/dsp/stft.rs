use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::SpectrogramConfig;
use crate::error::{Error, Result};

/// Periodic Hann window of length `win`, centered in `n_fft` zeros.
pub fn hann_window(win: usize, n_fft: usize) -> Vec<f64> {
    let mut w = vec![0.0; n_fft];
    let off = (n_fft - win) / 2;
    for i in 0..win {
        w[off + i] = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / win as f64).cos();
    }
    w
}

/// One-sided short-time spectrum, frame-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Stft {
    pub n_frames: usize,
    pub n_bins: usize,
    pub data: Vec<Complex64>,
}

impl Stft {
    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.data[t * self.n_bins..(t + 1) * self.n_bins]
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm()).collect()
    }
}

/// Mirror-pads `pad` samples on both sides (the edge sample is not repeated).
pub(crate) fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((1..=pad).rev().map(|i| x[i]));
    out.extend_from_slice(x);
    out.extend((0..pad).map(|i| x[n - 2 - i]));
    out
}

/// Windowed FFT of frames starting every `hop` samples of `x` (no padding).
pub(crate) fn frames_fft(x: &[f64], n_frames: usize, cfg: &SpectrogramConfig, window: &[f64]) -> Stft {
    let n = cfg.n_fft;
    let bins = cfg.n_bins();
    let fft = FftPlanner::new().plan_fft_forward(n);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut data = Vec::with_capacity(n_frames * bins);
    for t in 0..n_frames {
        let start = t * cfg.hop_length;
        for (i, b) in buf.iter_mut().enumerate() {
            let s = x.get(start + i).copied().unwrap_or(0.0);
            *b = Complex64::new(s * window[i], 0.0);
        }
        fft.process(&mut buf);
        data.extend_from_slice(&buf[..bins]);
    }
    Stft {
        n_frames,
        n_bins: bins,
        data,
    }
}

/// Hann-windowed STFT with reflect center padding; `1 + len / hop` frames.
pub fn stft(samples: &[f64], cfg: &SpectrogramConfig) -> Result<Stft> {
    cfg.validate()?;
    let pad = cfg.n_fft / 2;
    if samples.len() < cfg.win_length || samples.len() <= pad {
        return Err(Error::SequenceTooShort {
            op: "stft",
            len: samples.len(),
            kernel: cfg.win_length,
            padding: pad,
            stride: cfg.hop_length,
        });
    }
    let padded = reflect_pad(samples, pad);
    let window = hann_window(cfg.win_length, cfg.n_fft);
    Ok(frames_fft(&padded, cfg.frames_for(samples.len()), cfg, &window))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::Waveform;

    #[test]
    fn reflect_padding() {
        assert_eq!(reflect_pad(&[1.0, 2.0, 3.0, 4.0], 2), vec![3.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 2.0]);
    }

    #[test]
    fn sine_peaks_at_its_bin() {
        let cfg = SpectrogramConfig::default();
        let f = 20.0 * 22050.0 / 1024.0;
        let w = Waveform::sine(f, 0.5, 1.0, 22050);
        let s = stft(&w.samples, &cfg).unwrap();
        assert_eq!(s.n_frames, 87);
        // frames whose window lies entirely inside the signal
        for t in 2..s.n_frames - 2 {
            let mags: Vec<f64> = s.frame(t).iter().map(|c| c.norm()).collect();
            let arg = (0..mags.len()).max_by(|&a, &b| mags[a].total_cmp(&mags[b])).unwrap();
            assert_eq!(arg, 20, "frame {t}");
        }
    }

    #[test]
    fn too_short_input() {
        assert!(stft(&[0.0; 100], &SpectrogramConfig::default()).is_err());
    }
}
