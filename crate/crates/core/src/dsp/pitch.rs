//! Frame-synchronous F0 from the normalized autocorrelation.

use super::SpectrogramConfig;
use crate::error::{Error, Result};

pub const F0_MIN_HZ: f64 = 80.0;
pub const F0_MAX_HZ: f64 = 800.0;
/// Frames whose autocorrelation peak falls below this are unvoiced.
pub const VOICING_THRESHOLD: f64 = 0.3;
// Among candidate peaks, the shortest lag within this fraction of the best
// wins; avoids picking a multiple of the period.
const OCTAVE_TOLERANCE: f64 = 0.6;

/// One value per STFT frame, in Hz; 0 marks unvoiced frames.
pub fn estimate_f0(samples: &[f64], cfg: &SpectrogramConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let pad = cfg.n_fft / 2;
    if samples.len() < cfg.win_length || samples.len() <= pad {
        return Err(Error::SequenceTooShort {
            op: "estimate_f0",
            len: samples.len(),
            kernel: cfg.win_length,
            padding: pad,
            stride: cfg.hop_length,
        });
    }
    let sr = cfg.sample_rate as f64;
    let min_lag = (sr / F0_MAX_HZ).ceil() as usize;
    let max_lag = ((sr / F0_MIN_HZ).floor() as usize).min(cfg.n_fft / 2);
    // analysis window: two of the longest periods centered on the frame,
    // clipped to the signal rather than padded, since a mirrored extension
    // reads as a spurious period
    let half = max_lag + 1;
    let frames = cfg.frames_for(samples.len());
    Ok((0..frames)
        .map(|t| {
            let center = t * cfg.hop_length;
            let lo = center.saturating_sub(half);
            let hi = (center + half).min(samples.len());
            let x = &samples[lo..hi.max(lo)];
            // at least the lag itself must overlap
            frame_f0(x, min_lag, max_lag.min(x.len() / 2), sr)
        })
        .collect())
}

fn frame_f0(x: &[f64], min_lag: usize, max_lag: usize, sr: f64) -> f64 {
    if max_lag < min_lag + 1 || x.iter().all(|&v| v == 0.0) {
        return 0.0;
    }
    // r[i] is the correlation at lag min_lag - 1 + i, one lag of margin on
    // each side for the peak test and the parabolic refinement
    let r: Vec<f64> = (min_lag - 1..=max_lag + 1).map(|lag| normalized_autocorr(x, lag)).collect();
    let is_peak = |i: usize| r[i] >= r[i - 1] && r[i] >= r[i + 1];
    let best = (1..r.len() - 1)
        .filter(|&i| is_peak(i))
        .map(|i| r[i])
        .fold(f64::NEG_INFINITY, f64::max);
    if !(best >= VOICING_THRESHOLD) {
        return 0.0;
    }
    let peak = (1..r.len() - 1)
        .find(|&i| is_peak(i) && r[i] >= OCTAVE_TOLERANCE * best)
        .expect("the best peak qualifies");
    let (a, b, c) = (r[peak - 1], r[peak], r[peak + 1]);
    let denom = a - 2.0 * b + c;
    let shift = if denom.abs() > 1e-12 {
        (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    let lag = (min_lag - 1 + peak) as f64 + shift;
    sr / lag
}

fn normalized_autocorr(x: &[f64], lag: usize) -> f64 {
    let n = x.len() - lag;
    let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (a, b) = (x[i], x[i + lag]);
        xy += a * b;
        xx += a * a;
        yy += b * b;
    }
    let denom = (xx * yy).sqrt();
    if denom > 0.0 {
        xy / denom
    } else {
        0.0
    }
}
