//! Wall-clock real-time factors: seconds of audio produced per second of
//! compute, for mel generation alone (mRTF) and mel plus vocoder (RTF).

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::reference;
use crate::dsp::{griffin_lim, GriffinLim, MelSpectrogram, SpectrogramConfig, Waveform};
use crate::error::{Error, Result};
use crate::model::{PhonemeSequence, TtsModel};
use crate::scalar::Scalar;

pub trait MelGenerator {
    fn generate(&mut self, ids: &PhonemeSequence) -> Result<MelSpectrogram<f32>>;
}

pub trait Vocoder {
    fn vocode(&mut self, mel: &MelSpectrogram<f32>) -> Result<Waveform>;
}

impl<T: Scalar> MelGenerator for TtsModel<T> {
    fn generate(&mut self, ids: &PhonemeSequence) -> Result<MelSpectrogram<f32>> {
        let out = self.synthesize(ids, 1.0)?;
        MelSpectrogram::new(out.mel.cast(), &self.spectrogram)
    }
}

/// Griffin-Lim as a [`Vocoder`].
#[derive(Clone, Debug)]
pub struct GriffinLimVocoder {
    pub spectrogram: SpectrogramConfig,
    pub gl: GriffinLim,
}

impl Vocoder for GriffinLimVocoder {
    fn vocode(&mut self, mel: &MelSpectrogram<f32>) -> Result<Waveform> {
        griffin_lim(mel, &self.spectrogram, self.gl)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchOptions {
    /// Timed runs per sample; the sample's time is their mean.
    pub repeats: usize,
    /// Untimed runs per sample before timing.
    pub warmup: usize,
    /// Spread samples over threads. Each sample is still timed on its own.
    pub parallel: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            repeats: 1,
            warmup: 1,
            parallel: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleTiming {
    pub audio_seconds: f64,
    pub mel_seconds: f64,
    /// Mel generation plus vocoder, when a vocoder ran.
    pub wave_seconds: Option<f64>,
}

impl SampleTiming {
    pub fn mrtf(&self) -> f64 {
        self.audio_seconds / self.mel_seconds
    }

    pub fn rtf(&self) -> Option<f64> {
        self.wave_seconds.map(|t| self.audio_seconds / t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub median: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Option<Stats> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
        Some(Stats {
            mean: v.iter().sum::<f64>() / n as f64,
            min: v[0],
            max: v[n - 1],
            median,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub schema: u32,
    pub samples: Vec<SampleTiming>,
    /// `None` when there are no samples.
    pub mrtf: Option<Stats>,
    pub rtf: Option<Stats>,
    pub timer_resolution_seconds: f64,
    pub warnings: Vec<String>,
}

impl BenchResult {
    fn from_samples(samples: Vec<SampleTiming>) -> Self {
        let mrtf = Stats::of(&samples.iter().map(SampleTiming::mrtf).collect::<Vec<_>>());
        let rtf = Stats::of(&samples.iter().filter_map(SampleTiming::rtf).collect::<Vec<_>>());
        let resolution = timer_resolution().as_secs_f64();
        let mut warnings = Vec::new();
        let shortest = samples.iter().map(|s| s.mel_seconds).fold(f64::INFINITY, f64::min);
        if shortest.is_finite() && resolution > 0.01 * shortest {
            warnings.push(format!(
                "timer resolution {resolution:.3e} s exceeds 1% of the shortest measurement ({shortest:.3e} s)"
            ));
        }
        BenchResult {
            schema: super::REPORT_SCHEMA,
            samples,
            mrtf,
            rtf,
            timer_resolution_seconds: resolution,
            warnings,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("bench result: {e}")))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if self.samples.is_empty() {
            let _ = writeln!(s, "no samples");
            return s;
        }
        let audio: f64 = self.samples.iter().map(|t| t.audio_seconds).sum();
        let _ = writeln!(s, "{} samples, {:.2} s of audio", self.samples.len(), audio);
        let _ = writeln!(s, "{:<6} {:>10} {:>10} {:>10} {:>10}", "", "mean", "min", "max", "median");
        for (label, st) in [("mRTF", &self.mrtf), ("RTF", &self.rtf)] {
            if let Some(st) = st {
                let _ = writeln!(
                    s,
                    "{label:<6} {:>10.2} {:>10.2} {:>10.2} {:>10.2}",
                    st.mean, st.min, st.max, st.median
                );
            }
        }
        let _ = writeln!(s, "reference (published hardware, not reproducible here):");
        let _ = writeln!(s, "{:<18} {:>8} {:>10} {:>10}", "hardware", "kind", "value", "relative");
        for (label, mine, refs) in [("mRTF", &self.mrtf, reference::MRTF), ("RTF", &self.rtf, reference::RTF)] {
            if let Some(st) = mine {
                for (hw, v) in refs {
                    let _ = writeln!(s, "{hw:<18} {label:>8} {v:>10.1} {:>10}", super::relative(v, st.mean));
                }
            }
        }
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        s
    }
}

/// Smallest observable step of the monotonic clock.
pub fn timer_resolution() -> Duration {
    let mut best = Duration::MAX;
    for _ in 0..5 {
        let t0 = Instant::now();
        let mut t1 = Instant::now();
        while t1 == t0 {
            t1 = Instant::now();
        }
        best = best.min(t1 - t0);
    }
    best
}

fn time<R>(f: impl FnOnce() -> Result<R>) -> Result<(R, f64)> {
    let t0 = Instant::now();
    let r = f()?;
    Ok((r, t0.elapsed().as_secs_f64()))
}

fn run_sample<G: MelGenerator, V: Vocoder>(
    gen: &mut G,
    voc: &mut Option<V>,
    ids: &PhonemeSequence,
    opts: &BenchOptions,
) -> Result<SampleTiming> {
    for _ in 0..opts.warmup {
        let mel = gen.generate(ids)?;
        if let Some(v) = voc.as_mut() {
            v.vocode(&mel)?;
        }
    }
    let (mut mel_t, mut wave_t, mut audio) = (0.0, 0.0, 0.0);
    for _ in 0..opts.repeats {
        let (mel, t_mel) = time(|| gen.generate(ids))?;
        mel_t += t_mel;
        match voc.as_mut() {
            Some(v) => {
                let (wave, t_voc) = time(|| v.vocode(&mel))?;
                wave_t += t_mel + t_voc;
                audio = wave.seconds();
            }
            None => audio = mel.seconds(),
        }
    }
    let r = opts.repeats as f64;
    Ok(SampleTiming {
        audio_seconds: audio,
        mel_seconds: mel_t / r,
        wave_seconds: voc.as_ref().map(|_| wave_t / r),
    })
}

fn run<G, V>(gen: &G, voc: Option<&V>, inputs: &[PhonemeSequence], opts: &BenchOptions) -> Result<BenchResult>
where
    G: MelGenerator + Clone + Send,
    V: Vocoder + Clone + Send,
{
    if opts.repeats == 0 {
        return Err(Error::Config("bench needs at least one repeat".into()));
    }
    let samples = if opts.parallel && inputs.len() > 1 {
        let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(inputs.len());
        let chunk = inputs.len().div_ceil(workers);
        std::thread::scope(|s| {
            let handles: Vec<_> = inputs
                .chunks(chunk)
                .map(|part| {
                    let (mut g, mut v) = (gen.clone(), voc.cloned());
                    s.spawn(move || {
                        part.iter()
                            .map(|ids| run_sample(&mut g, &mut v, ids, opts))
                            .collect::<Result<Vec<_>>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("bench worker panicked"))
                .collect::<Result<Vec<_>>>()
        })?
        .concat()
    } else {
        let (mut g, mut v) = (gen.clone(), voc.cloned());
        inputs
            .iter()
            .map(|ids| run_sample(&mut g, &mut v, ids, opts))
            .collect::<Result<Vec<_>>>()?
    };
    Ok(BenchResult::from_samples(samples))
}

/// Mel generation only; audio length is `M * hop / sr` of each output.
pub fn measure_mrtf<G: MelGenerator + Clone + Send>(gen: &G, inputs: &[PhonemeSequence], opts: &BenchOptions) -> Result<BenchResult> {
    run::<G, GriffinLimVocoder>(gen, None, inputs, opts)
}

/// Mel generation and vocoding timed in the same runs, so every sample's
/// RTF is at most its mRTF.
pub fn measure_rtf<G, V>(gen: &G, vocoder: &V, inputs: &[PhonemeSequence], opts: &BenchOptions) -> Result<BenchResult>
where
    G: MelGenerator + Clone + Send,
    V: Vocoder + Clone + Send,
{
    run(gen, Some(vocoder), inputs, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    /// Sleeps, then returns `seconds` of silent mel.
    #[derive(Clone)]
    struct SleepStub {
        sleep: Duration,
        seconds: f64,
    }

    impl MelGenerator for SleepStub {
        fn generate(&mut self, _: &PhonemeSequence) -> Result<MelSpectrogram<f32>> {
            std::thread::sleep(self.sleep);
            let cfg = SpectrogramConfig::default();
            let m = (self.seconds * cfg.sample_rate as f64 / cfg.hop_length as f64).round() as usize;
            MelSpectrogram::new(Tensor::full(&[m, cfg.n_mels], -11.5f32), &cfg)
        }
    }

    #[derive(Clone)]
    struct FreeVocoder;

    impl Vocoder for FreeVocoder {
        fn vocode(&mut self, mel: &MelSpectrogram<f32>) -> Result<Waveform> {
            Waveform::new(vec![0.0; mel.n_frames() * mel.hop_length], mel.sample_rate)
        }
    }

    fn inputs(n: usize) -> Vec<PhonemeSequence> {
        (0..n).map(|_| PhonemeSequence::new(vec![2, 3]).unwrap()).collect()
    }

    #[test]
    fn stats_of_one_sample() {
        let s = Stats::of(&[3.0]).unwrap();
        assert_eq!((s.min, s.max, s.median, s.mean), (3.0, 3.0, 3.0, 3.0));
        assert_eq!(Stats::of(&[1.0, 4.0, 2.0, 3.0]).unwrap().median, 2.5);
        assert!(Stats::of(&[]).is_none());
    }

    #[test]
    fn zero_cost_vocoder_keeps_rtf_near_mrtf() {
        let stub = SleepStub {
            sleep: Duration::from_millis(20),
            seconds: 1.0,
        };
        let r = measure_rtf(&stub, &FreeVocoder, &inputs(2), &BenchOptions::default()).unwrap();
        let (m, w) = (r.mrtf.unwrap().mean, r.rtf.unwrap().mean);
        assert!(w <= m && (m - w) / m < 0.05, "{m} {w}");
        for s in &r.samples {
            assert!(s.rtf().unwrap() <= s.mrtf());
        }
    }

    #[test]
    fn empty_bench_says_so() {
        let stub = SleepStub {
            sleep: Duration::ZERO,
            seconds: 1.0,
        };
        let r = measure_mrtf(&stub, &[], &BenchOptions::default()).unwrap();
        assert!(r.mrtf.is_none());
        assert_eq!(r.to_text(), "no samples\n");
        assert_eq!(BenchResult::from_json(&r.to_json().unwrap()).unwrap(), r);
    }

    #[test]
    fn parallel_matches_sample_count() {
        let stub = SleepStub {
            sleep: Duration::from_millis(5),
            seconds: 0.5,
        };
        let opts = BenchOptions {
            parallel: true,
            ..BenchOptions::default()
        };
        let r = measure_mrtf(&stub, &inputs(5), &opts).unwrap();
        assert_eq!(r.samples.len(), 5);
        assert!(r.samples.iter().all(|s| s.mel_seconds >= 0.005));
    }
}
