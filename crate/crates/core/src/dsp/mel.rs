use super::stft::stft;
use super::{MelSpectrogram, SpectrogramConfig};
use crate::error::Result;
use crate::tensor::Tensor;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// `n_mels x n_bins` triangular filters with centers equally spaced on the
/// HTK mel scale. Each row sums to 1.
pub fn mel_filterbank(cfg: &SpectrogramConfig) -> Result<Tensor<f64>> {
    cfg.validate()?;
    let bins = cfg.n_bins();
    let (lo, hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
    let points: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = |k: usize| k as f64 * cfg.sample_rate as f64 / cfg.n_fft as f64;
    let mut data = vec![0.0; cfg.n_mels * bins];
    for m in 0..cfg.n_mels {
        let (left, center, right) = (points[m], points[m + 1], points[m + 2]);
        let row = &mut data[m * bins..(m + 1) * bins];
        for (k, w) in row.iter_mut().enumerate() {
            let f = bin_hz(k);
            *w = if f > left && f <= center {
                (f - left) / (center - left)
            } else if f > center && f < right {
                (right - f) / (right - center)
            } else {
                0.0
            };
        }
        let sum: f64 = row.iter().sum();
        if sum > 0.0 {
            row.iter_mut().for_each(|w| *w /= sum);
        }
    }
    Tensor::new(&[cfg.n_mels, bins], data)
}

/// Linear mel magnitudes `fb . |X|`, frame-major `(M, n_mels)`.
pub(crate) fn mel_magnitudes(mags: &[f64], n_frames: usize, fb: &Tensor<f64>) -> Vec<f64> {
    let (n_mels, bins) = (fb.shape()[0], fb.shape()[1]);
    let mut out = vec![0.0; n_frames * n_mels];
    for t in 0..n_frames {
        let frame = &mags[t * bins..(t + 1) * bins];
        for m in 0..n_mels {
            out[t * n_mels + m] = fb.row(m).iter().zip(frame).map(|(w, x)| w * x).sum();
        }
    }
    out
}

/// Natural-log mel spectrogram, floored at `cfg.log_floor`.
pub fn mel_spectrogram(samples: &[f64], cfg: &SpectrogramConfig) -> Result<MelSpectrogram<f64>> {
    let s = stft(samples, cfg)?;
    let fb = mel_filterbank(cfg)?;
    let floor = cfg.log_floor;
    let mel: Vec<f64> = mel_magnitudes(&s.magnitudes(), s.n_frames, &fb)
        .into_iter()
        .map(|v| v.max(floor).ln())
        .collect();
    MelSpectrogram::new(Tensor::new(&[s.n_frames, cfg.n_mels], mel)?, cfg)
}

/// L2 norm of every STFT magnitude frame.
pub fn frame_energy(samples: &[f64], cfg: &SpectrogramConfig) -> Result<Vec<f64>> {
    let s = stft(samples, cfg)?;
    Ok((0..s.n_frames)
        .map(|t| s.frame(t).iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::Waveform;

    #[test]
    fn mel_scale_round_trip() {
        for hz in [0.0, 100.0, 1000.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn filterbank_rows_and_coverage() {
        let cfg = SpectrogramConfig::default();
        let fb = mel_filterbank(&cfg).unwrap();
        assert_eq!(fb.shape(), &[80, 513]);
        let mut last_center = -1.0;
        for m in 0..80 {
            let row = fb.row(m);
            assert!(row.iter().all(|&w| w >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let center = row.iter().enumerate().map(|(k, w)| k as f64 * w).sum::<f64>();
            assert!(center > last_center);
            last_center = center;
        }
        for k in 1..513 {
            let f = k as f64 * 22050.0 / 1024.0;
            if f < 8000.0 {
                assert!((0..80).any(|m| fb.row(m)[k] > 0.0), "bin {k} uncovered");
            }
        }
    }

    #[test]
    fn silence_hits_the_floor() {
        let cfg = SpectrogramConfig::default();
        let mel = mel_spectrogram(&vec![0.0; 5000], &cfg).unwrap();
        assert_eq!(mel.frames.shape(), &[1 + 5000 / 256, 80]);
        let floor = 1e-5f64.ln();
        assert!(mel.frames.data().iter().all(|&v| v == floor));
        assert!(frame_energy(&vec![0.0; 5000], &cfg).unwrap().iter().all(|&e| e == 0.0));
    }

    #[test]
    fn doubling_amplitude_adds_ln2() {
        let cfg = SpectrogramConfig::default();
        let a = Waveform::sine(300.0, 0.2, 0.5, 22050);
        let b = Waveform::sine(300.0, 0.4, 0.5, 22050);
        let ma = mel_spectrogram(&a.samples, &cfg).unwrap();
        let mb = mel_spectrogram(&b.samples, &cfg).unwrap();
        let floor = 1e-5f64.ln();
        for (x, y) in ma.frames.data().iter().zip(mb.frames.data()) {
            if *x > floor + 1.0 {
                assert!((y - x - 2f64.ln()).abs() < 1e-9);
            }
        }
        let ea = frame_energy(&a.samples, &cfg).unwrap();
        let eb = frame_energy(&b.samples, &cfg).unwrap();
        for (x, y) in ea.iter().zip(&eb) {
            assert!((y / x - 2.0).abs() < 1e-3);
        }
    }
}
