//! Training samples: target extraction from audio and the synthetic toy
//! corpus.

use std::path::Path;

use crate::dsp::{estimate_f0, frame_energy, mel_spectrogram, read_wav, SpectrogramConfig, Waveform};
use crate::error::{Error, Result};
use crate::frontend::{parse_phonemes, phonemes_to_ids, SymbolTable};
use crate::model::PhonemeSequence;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Largest tolerated gap between analysed frames and summed durations.
pub const MAX_FRAME_ADJUST: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    pub ids: PhonemeSequence,
    /// Frames per phoneme; sums to the mel frame count.
    pub durations: Vec<usize>,
    /// `(M, n_mels)` log-mel.
    pub mel: Tensor<f64>,
    /// Per-phoneme mean F0 over voiced frames (Hz, 0 if none).
    pub pitch: Vec<f64>,
    /// Per-phoneme mean frame energy.
    pub energy: Vec<f64>,
}

impl TrainSample {
    pub fn n_frames(&self) -> usize {
        self.mel.shape()[0]
    }
}

/// Trims or extends (repeating the last frame) to exactly `n` rows.
fn fit_rows<X: Clone>(rows: Vec<X>, n: usize) -> Vec<X> {
    let mut rows = rows;
    let last = rows.last().cloned();
    rows.truncate(n);
    if let Some(last) = last {
        rows.resize(n, last);
    }
    rows
}

/// Consecutive frame spans `[start, end)`, one per phoneme.
pub fn duration_spans(durations: &[usize]) -> Vec<(usize, usize)> {
    let mut start = 0;
    durations
        .iter()
        .map(|&d| {
            let span = (start, start + d);
            start += d;
            span
        })
        .collect()
}

pub fn extract_targets(wave: &Waveform, ids: &PhonemeSequence, durations: &[usize], cfg: &SpectrogramConfig) -> Result<TrainSample> {
    if durations.len() != ids.len() {
        return Err(Error::shape("extract_targets", &[ids.len()], &[durations.len()]));
    }
    let total: usize = durations.iter().sum();
    if total == 0 {
        return Err(Error::EmptyUtterance);
    }
    let mel = mel_spectrogram(&wave.samples, cfg)?;
    let frames = mel.n_frames();
    if frames.abs_diff(total) > MAX_FRAME_ADJUST {
        return Err(Error::Misalignment { frames, durations: total });
    }
    let n_mels = cfg.n_mels;
    let rows: Vec<Vec<f64>> = (0..frames).map(|t| mel.frames.row(t).to_vec()).collect();
    let mel = Tensor::new(&[total, n_mels], fit_rows(rows, total).concat())?;
    let energy = fit_rows(frame_energy(&wave.samples, cfg)?, total);
    let f0 = fit_rows(estimate_f0(&wave.samples, cfg)?, total);

    let spans = duration_spans(durations);
    let mean = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let pitch = spans
        .iter()
        .map(|&(a, b)| {
            let voiced: Vec<f64> = f0[a..b].iter().copied().filter(|&f| f > 0.0).collect();
            mean(&voiced)
        })
        .collect();
    let energy = spans.iter().map(|&(a, b)| mean(&energy[a..b])).collect();
    Ok(TrainSample {
        ids: ids.clone(),
        durations: durations.to_vec(),
        mel,
        pitch,
        energy,
    })
}

/// Number of pseudo-phonemes in the toy corpus.
pub const TOY_PHONEMES: usize = 12;
/// Fundamental of each pseudo-phoneme, Hz.
pub const TOY_F0: [f64; TOY_PHONEMES] = [120.0, 140.0, 160.0, 180.0, 200.0, 220.0, 250.0, 280.0, 310.0, 340.0, 370.0, 400.0];
/// Peak amplitude of each pseudo-phoneme.
pub const TOY_AMPLITUDE: [f64; TOY_PHONEMES] = [0.30, 0.45, 0.60, 0.35, 0.50, 0.65, 0.40, 0.55, 0.70, 0.32, 0.48, 0.62];
/// Token id of pseudo-phoneme 0; the rest follow consecutively.
pub const TOY_FIRST_ID: usize = 2;
const CROSSFADE_SECONDS: f64 = 0.005;

/// A toy utterance and the audio its targets were extracted from.
#[derive(Clone, Debug, PartialEq)]
pub struct ToySample {
    pub sample: TrainSample,
    pub wave: Waveform,
    /// Pseudo-phoneme index of every position.
    pub phonemes: Vec<usize>,
}

/// Concatenated sine segments joined by linear crossfades, `Σ durations ·
/// hop` samples in all. Boundaries sit halfway between frame centers, so
/// the centered frame `t` lies inside the segment of the phoneme that owns
/// it.
pub fn render_toy(phonemes: &[usize], durations: &[usize], cfg: &SpectrogramConfig) -> Result<Waveform> {
    let hop = cfg.hop_length;
    let sr = cfg.sample_rate as f64;
    let len = durations.iter().sum::<usize>() * hop;
    let fade = ((CROSSFADE_SECONDS * sr).round() as usize).max(1);
    let mut out = vec![0.0; len];
    let mut frame = 0usize;
    for (k, (&p, &d)) in phonemes.iter().zip(durations).enumerate() {
        let first = k == 0;
        let last = k + 1 == phonemes.len();
        let start = if first { 0 } else { (frame * hop).saturating_sub(hop / 2) };
        frame += d;
        let end = if last { len } else { (frame * hop).saturating_sub(hop / 2) };
        // fades are centered on the boundaries
        let lo = if first { start } else { start.saturating_sub(fade / 2) };
        let hi = if last { end } else { (end + fade / 2).min(len) };
        let w = 2.0 * std::f64::consts::PI * TOY_F0[p] / sr;
        for (i, slot) in out.iter_mut().enumerate().take(hi).skip(lo) {
            let mut gain = 1.0;
            if !first && i < lo + fade {
                gain *= (i - lo) as f64 / fade as f64;
            }
            if !last && i + fade >= hi {
                gain *= (hi - i) as f64 / fade as f64;
            }
            *slot += gain * TOY_AMPLITUDE[p] * (w * (i - lo) as f64).sin();
        }
    }
    Waveform::new(out, cfg.sample_rate)
}

/// Deterministic corpus of 3-8 phoneme utterances with 4-12 frame
/// durations, targets extracted from the rendered audio.
pub fn generate_toy_dataset(n_samples: usize, seed: u64, cfg: &SpectrogramConfig) -> Result<Vec<ToySample>> {
    let mut rng = Rng::new(seed);
    (0..n_samples)
        .map(|_| {
            let n = rng.range_inclusive(3, 8);
            let phonemes: Vec<usize> = (0..n).map(|_| rng.range_inclusive(0, TOY_PHONEMES - 1)).collect();
            let durations: Vec<usize> = (0..n).map(|_| rng.range_inclusive(4, 12)).collect();
            let wave = render_toy(&phonemes, &durations, cfg)?;
            let ids = PhonemeSequence::new(phonemes.iter().map(|p| TOY_FIRST_ID + p).collect())?;
            let sample = extract_targets(&wave, &ids, &durations, cfg)?;
            Ok(ToySample { sample, wave, phonemes })
        })
        .collect()
}

/// Manifest file name inside a dataset directory.
pub const MANIFEST: &str = "manifest.txt";

/// Loads an aligned corpus from `dir/manifest.txt`. Each non-blank line not
/// starting with `#` reads `audio.wav|PH PH ...|d d ...`: a WAV path relative
/// to `dir`, the phonemes, and their durations in frames.
pub fn load_dataset_dir(dir: impl AsRef<Path>, symbols: &SymbolTable, cfg: &SpectrogramConfig) -> Result<Vec<TrainSample>> {
    let dir = dir.as_ref();
    let manifest = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&manifest)?;
    let err = |line: usize, msg: String| Error::Parse {
        path: manifest.clone(),
        line,
        msg,
    };
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('|').map(str::trim).collect();
        let [wav, phonemes, durations] = fields[..] else {
            return Err(err(i + 1, format!("expected 3 `|`-separated fields, found {}", fields.len())));
        };
        let phonemes = parse_phonemes(phonemes);
        let durations = durations
            .split_whitespace()
            .map(|d| d.parse::<usize>().map_err(|e| err(i + 1, format!("duration `{d}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if phonemes.len() != durations.len() {
            return Err(err(i + 1, format!("{} phonemes but {} durations", phonemes.len(), durations.len())));
        }
        if let Some(p) = phonemes.iter().find(|p| !symbols.contains(p)) {
            return Err(err(i + 1, format!("unknown phoneme `{p}`")));
        }
        let wave = read_wav(dir.join(wav))?;
        if wave.sample_rate != cfg.sample_rate {
            return Err(err(
                i + 1,
                format!("{wav}: sample rate {} Hz, expected {}", wave.sample_rate, cfg.sample_rate),
            ));
        }
        let ids = phonemes_to_ids(&phonemes, symbols)?;
        out.push(extract_targets(&wave, &ids, &durations, cfg)?);
    }
    if out.is_empty() {
        return Err(err(0, "no utterances".into()));
    }
    Ok(out)
}
