//! Phase reconstruction from a log-mel spectrogram.

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::mel::mel_filterbank;
use super::stft::{frames_fft, hann_window, Stft};
use super::{MelSpectrogram, SpectrogramConfig, Waveform};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;

/// Peak level of normalized output.
pub const OUTPUT_PEAK: f64 = 0.95;
/// Output quieter than this is left unnormalized.
pub const SILENCE_PEAK: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GriffinLim {
    pub iters: usize,
    /// Seeds the initial random phase.
    pub seed: u64,
}

impl Default for GriffinLim {
    fn default() -> Self {
        GriffinLim { iters: 32, seed: 0 }
    }
}

pub fn griffin_lim<T: Scalar>(mel: &MelSpectrogram<T>, cfg: &SpectrogramConfig, gl: GriffinLim) -> Result<Waveform> {
    griffin_lim_traced(mel, cfg, gl).map(|(w, _)| w)
}

/// Also returns the consistency residual `|| |STFT(x_k)| - S ||` after every
/// iteration, measured over the full (two-sided) spectrum.
pub fn griffin_lim_traced<T: Scalar>(mel: &MelSpectrogram<T>, cfg: &SpectrogramConfig, gl: GriffinLim) -> Result<(Waveform, Vec<f64>)> {
    cfg.validate()?;
    if gl.iters == 0 {
        return Err(Error::Config("griffin-lim needs at least one iteration".into()));
    }
    if mel.n_mels() != cfg.n_mels {
        return Err(Error::shape("griffin_lim", mel.frames.shape(), &[mel.n_frames(), cfg.n_mels]));
    }
    let frames = mel.n_frames();
    let bins = cfg.n_bins();
    let target = linear_magnitudes(mel, cfg)?;

    let mut rng = Rng::new(gl.seed);
    let mut spec = Stft {
        n_frames: frames,
        n_bins: bins,
        data: target
            .iter()
            .map(|&s| Complex64::from_polar(s, rng.uniform(-std::f64::consts::PI, std::f64::consts::PI)))
            .collect(),
    };
    let window = hann_window(cfg.win_length, cfg.n_fft);
    let mut residuals = Vec::with_capacity(gl.iters);
    let mut x = Vec::new();
    for _ in 0..gl.iters {
        x = istft_least_squares(&spec, cfg, &window);
        let rebuilt = frames_fft(&x, frames, cfg, &window);
        let mut r2 = 0.0;
        for (i, (c, &s)) in rebuilt.data.iter().zip(&target).enumerate() {
            let mag = c.norm();
            r2 += bin_weight(i % bins, bins) * (mag - s).powi(2);
            spec.data[i] = if mag > 0.0 { c * (s / mag) } else { Complex64::new(s, 0.0) };
        }
        residuals.push(r2.sqrt());
    }

    let start = cfg.n_fft / 2;
    let mut samples = x[start..start + frames * cfg.hop_length].to_vec();
    let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak >= SILENCE_PEAK {
        let g = OUTPUT_PEAK / peak;
        samples.iter_mut().for_each(|s| *s *= g);
    }
    Ok((Waveform::new(samples, cfg.sample_rate)?, residuals))
}

/// Interior bins stand for two conjugate bins of the full spectrum.
fn bin_weight(k: usize, bins: usize) -> f64 {
    if k == 0 || k == bins - 1 {
        1.0
    } else {
        2.0
    }
}

/// Per-frame nonnegative least squares `argmin_{s >= 0} ||F s - exp(mel)||`,
/// frame-major `(M, n_bins)`.
fn linear_magnitudes<T: Scalar>(mel: &MelSpectrogram<T>, cfg: &SpectrogramConfig) -> Result<Vec<f64>> {
    let fb = mel_filterbank(cfg)?;
    let (n_mels, bins) = (cfg.n_mels, cfg.n_bins());
    let f = DMatrix::from_row_slice(n_mels, bins, fb.data());
    let gram = f.transpose() * &f;
    let frames = mel.n_frames();
    let mut out = Vec::with_capacity(frames * bins);
    for t in 0..frames {
        let m = DVector::from_iterator(n_mels, mel.frames.row(t).iter().map(|v| v.as_f64().exp()));
        let rhs = f.transpose() * m;
        out.extend(nnls(&gram, &rhs).iter());
    }
    Ok(out)
}

/// Lawson-Hanson active-set solver on the normal equations
/// `G x = b` (G = FᵀF, b = Fᵀm) subject to `x >= 0`.
pub(crate) fn nnls(gram: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = b.len();
    let tol = 1e-12 * b.amax().max(f64::MIN_POSITIVE);
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let solve = |passive: &[bool]| -> (Vec<usize>, DVector<f64>) {
        let idx: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
        let g = DMatrix::from_fn(idx.len(), idx.len(), |r, c| gram[(idx[r], idx[c])]);
        let rhs = DVector::from_iterator(idx.len(), idx.iter().map(|&i| b[i]));
        let z = g
            .clone()
            .cholesky()
            .map(|c| c.solve(&rhs))
            .unwrap_or_else(|| g.svd(true, true).solve(&rhs, 1e-14).unwrap_or_else(|_| DVector::zeros(idx.len())));
        (idx, z)
    };
    for _ in 0..3 * n {
        let w = b - gram * &x;
        let candidate = (0..n).filter(|&i| !passive[i] && w[i] > tol).max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = candidate else { break };
        passive[j] = true;
        loop {
            let (idx, z) = solve(&passive);
            if z.iter().all(|&v| v > 0.0) {
                x.fill(0.0);
                for (k, &i) in idx.iter().enumerate() {
                    x[i] = z[k];
                }
                break;
            }
            // step toward z until the first passive coordinate hits zero
            let alpha = idx
                .iter()
                .enumerate()
                .filter(|&(k, _)| z[k] <= 0.0)
                .map(|(k, &i)| x[i] / (x[i] - z[k]))
                .fold(f64::INFINITY, f64::min);
            for (k, &i) in idx.iter().enumerate() {
                x[i] += alpha * (z[k] - x[i]);
                if x[i] <= tol {
                    x[i] = 0.0;
                    passive[i] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    x
}

/// Least-squares inverse STFT on the uncentered domain of length
/// `(M - 1) * hop + n_fft`: `sum_t w * ifft(X_t) / sum_t w^2`.
fn istft_least_squares(spec: &Stft, cfg: &SpectrogramConfig, window: &[f64]) -> Vec<f64> {
    let n = cfg.n_fft;
    let len = (spec.n_frames - 1) * cfg.hop_length + n;
    let ifft = FftPlanner::new().plan_fft_inverse(n);
    let mut num = vec![0.0; len];
    let mut den = vec![0.0; len];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for t in 0..spec.n_frames {
        let frame = spec.frame(t);
        buf[..spec.n_bins].copy_from_slice(frame);
        for k in spec.n_bins..n {
            buf[k] = frame[n - k].conj();
        }
        // a real signal has real DC and Nyquist terms
        buf[0].im = 0.0;
        buf[n / 2].im = 0.0;
        ifft.process(&mut buf);
        let start = t * cfg.hop_length;
        for i in 0..n {
            num[start + i] += window[i] * buf[i].re / n as f64;
            den[start + i] += window[i] * window[i];
        }
    }
    num.iter().zip(&den).map(|(a, b)| if *b > 1e-12 { a / b } else { 0.0 }).collect()
}
