//! The acoustic model: phoneme encoder with two-scale fusion, parallel
//! pitch/energy/duration heads, length regulation and the mel decoder.

pub mod config;
pub mod layers;
pub mod length;
pub mod params;

pub use config::{bucketize, BinScale, BinSpec, BlockConfig, DecoderConfig, ModelConfig, TargetStats, DEFAULT_VOCAB};
pub use layers::HeadOutput;
pub use length::{length_regulate, regulated_repeats, repeat_index};
pub use params::{Bound, ParamBuilder, ParamId, ParamStore};

use layers::{AcousticHead, DecoderBlock, Linear, TransformerBlock};

use crate::dsp::SpectrogramConfig;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tape::{GradTape, Var};
use crate::tensor::Tensor;

/// Token ids of one utterance; never empty.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhonemeSequence {
    ids: Vec<usize>,
}

impl PhonemeSequence {
    pub fn new(ids: Vec<usize>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::EmptyInput("phoneme sequence"));
        }
        Ok(PhonemeSequence { ids })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Layer handles into the model's [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Layers {
    pub embedding: ParamId,
    pub block1: TransformerBlock,
    pub block2: TransformerBlock,
    pub up1: Linear,
    pub up2: Linear,
    pub up2_weight: ParamId,
    pub up2_bias: ParamId,
    pub fuse: Linear,
    pub pitch: AcousticHead,
    pub energy: AcousticHead,
    pub duration: AcousticHead,
    pub pitch_table: ParamId,
    pub energy_table: ParamId,
    pub decoder: Vec<DecoderBlock>,
    pub mel_out: Linear,
}

impl Layers {
    fn build<T: Scalar>(cfg: &ModelConfig, pb: &mut ParamBuilder<'_, T>) -> Self {
        let d = cfg.d;
        let q = cfg.quarter();
        let c2 = cfg.block2.out_dim;
        let embedding = pb.scope("encoder", |pb| pb.embedding("embedding", cfg.vocab_size, d));
        let block1 = TransformerBlock::new(pb, "encoder.block1", d, &cfg.block1);
        let block2 = TransformerBlock::new(pb, "encoder.block2", cfg.block1.out_dim, &cfg.block2);
        let up1 = Linear::new(pb, "encoder.up1", cfg.block1.out_dim, q);
        let up2 = Linear::new(pb, "encoder.up2", c2, q);
        // transposed conv, (c_in, c_out, k) with k = stride = 2
        let (up2_weight, up2_bias) = pb.scope("encoder.up2.transposed", |pb| {
            (pb.uniform("weight", &[q, q, 2], q * 2), pb.uniform("bias", &[q], q * 2))
        });
        let fuse = Linear::new(pb, "encoder.fuse", 2 * q, q);
        let head = |pb: &mut ParamBuilder<'_, T>, name| AcousticHead::new(pb, name, q, cfg.head_hidden, cfg.head_kernel);
        let pitch = head(pb, "acoustic.pitch");
        let energy = head(pb, "acoustic.energy");
        let duration = head(pb, "acoustic.duration");
        let pitch_table = pb.scope("acoustic", |pb| pb.embedding("pitch_table", cfg.n_bins, q));
        let energy_table = pb.scope("acoustic", |pb| pb.embedding("energy_table", cfg.n_bins, q));
        let decoder = (0..cfg.decoder.n_blocks)
            .map(|i| DecoderBlock::new(pb, &format!("decoder.block{}", i + 1), d, cfg.decoder.kernel))
            .collect();
        let mel_out = Linear::new(pb, "decoder.mel_out", d, cfg.n_mels);
        Layers {
            embedding,
            block1,
            block2,
            up1,
            up2,
            up2_weight,
            up2_bias,
            fuse,
            pitch,
            energy,
            duration,
            pitch_table,
            energy_table,
            decoder,
            mel_out,
        }
    }
}

/// How the length regulator obtains per-phoneme frame counts, and whether
/// pitch/energy embeddings use ground-truth bins.
#[derive(Clone, Copy, Debug)]
pub struct Conditioning<'a> {
    /// Ground-truth durations; `None` uses the duration head.
    pub durations: Option<&'a [usize]>,
    pub duration_scale: f64,
    /// Ground-truth pitch (Hz) and energy used to select embedding bins.
    pub pitch: Option<&'a [f64]>,
    pub energy: Option<&'a [f64]>,
}

impl Default for Conditioning<'_> {
    fn default() -> Self {
        Conditioning {
            durations: None,
            duration_scale: 1.0,
            pitch: None,
            energy: None,
        }
    }
}

impl<'a> Conditioning<'a> {
    pub fn predicted(duration_scale: f64) -> Self {
        Conditioning {
            duration_scale,
            ..Default::default()
        }
    }

    pub fn durations(durations: &'a [usize]) -> Self {
        Conditioning {
            durations: Some(durations),
            ..Default::default()
        }
    }

    pub fn teacher_forced(durations: &'a [usize], pitch: &'a [f64], energy: &'a [f64]) -> Self {
        Conditioning {
            durations: Some(durations),
            duration_scale: 1.0,
            pitch: Some(pitch),
            energy: Some(energy),
        }
    }
}

/// Every intermediate of one forward pass, as tape handles.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub embedded: Var,
    pub block1: Var,
    pub block2: Var,
    pub u1: Var,
    pub u2: Var,
    pub features: Var,
    pub pitch: HeadOutput,
    pub energy: HeadOutput,
    /// `ReLU` of the duration head's projection, `(N, 1)`.
    pub duration: Var,
    pub z_pitch: Var,
    pub z_energy: Var,
    pub z_duration: Var,
    pub fused: Var,
    pub regulated: Var,
    pub mel: Var,
    pub pitch_bins: Vec<usize>,
    pub energy_bins: Vec<usize>,
    pub repeats: Vec<usize>,
}

/// Per-phoneme predictions, with pitch and energy in target units.
#[derive(Clone, Debug, PartialEq)]
pub struct AcousticPrediction<T: Scalar> {
    pub y_pitch: Vec<f64>,
    pub y_energy: Vec<f64>,
    pub y_duration: Vec<f64>,
    pub z_pitch: Tensor<T>,
    pub z_energy: Tensor<T>,
    pub z_duration: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct Synthesis<T: Scalar> {
    /// `(M, n_mels)` log-mel frames.
    pub mel: Tensor<T>,
    pub prediction: AcousticPrediction<T>,
    pub repeats: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct TtsModel<T: Scalar> {
    pub config: ModelConfig,
    pub spectrogram: SpectrogramConfig,
    pub params: ParamStore<T>,
    layers: Layers,
    pitch_boundaries: Vec<f64>,
    energy_boundaries: Vec<f64>,
}

impl<T: Scalar> TtsModel<T> {
    pub fn new(config: ModelConfig, spectrogram: SpectrogramConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = Rng::new(seed);
        let layers = Layers::build(&config, &mut ParamBuilder::new(&mut params, &mut rng));
        Ok(Self::assemble(config, spectrogram, params, layers))
    }

    /// A model whose tensors are replaced by `params`, validated by name
    /// and shape against the layout `config` implies.
    pub fn from_params(config: ModelConfig, spectrogram: SpectrogramConfig, params: ParamStore<T>) -> Result<Self> {
        let mut model = Self::new(config, spectrogram, 0)?;
        if params.len() != model.params.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, found {}",
                model.params.len(),
                params.len()
            )));
        }
        for (name, t) in params.iter() {
            let slot = model
                .params
                .by_name_mut(name)
                .ok_or_else(|| Error::Config(format!("unexpected parameter {name}")))?;
            if slot.shape() != t.shape() {
                return Err(Error::ArchiveShape {
                    name: name.to_string(),
                    found: t.shape().to_vec(),
                    expected: slot.shape().to_vec(),
                });
            }
            *slot = t.clone().with_requires_grad(true);
        }
        Ok(model)
    }

    fn assemble(config: ModelConfig, spectrogram: SpectrogramConfig, params: ParamStore<T>, layers: Layers) -> Self {
        let pitch_boundaries = config.pitch_bins.boundaries(config.n_bins);
        let energy_boundaries = config.energy_bins.boundaries(config.n_bins);
        TtsModel {
            config,
            spectrogram,
            params,
            layers,
            pitch_boundaries,
            energy_boundaries,
        }
    }

    pub fn layers(&self) -> &Layers {
        &self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.params.total_elements()
    }

    pub fn pitch_boundaries(&self) -> &[f64] {
        &self.pitch_boundaries
    }

    pub fn energy_boundaries(&self) -> &[f64] {
        &self.energy_boundaries
    }

    /// Replaces bin ranges and target statistics (fitted on training data).
    /// Parameters are untouched.
    pub fn set_target_calibration(
        &mut self,
        pitch: BinSpec,
        energy: BinSpec,
        pitch_stats: TargetStats,
        energy_stats: TargetStats,
    ) -> Result<()> {
        let mut cfg = self.config.clone();
        cfg.pitch_bins = pitch;
        cfg.energy_bins = energy;
        cfg.pitch_stats = pitch_stats;
        cfg.energy_stats = energy_stats;
        cfg.validate()?;
        self.pitch_boundaries = cfg.pitch_bins.boundaries(cfg.n_bins);
        self.energy_boundaries = cfg.energy_bins.boundaries(cfg.n_bins);
        self.config = cfg;
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> TtsModel<U> {
        TtsModel {
            config: self.config.clone(),
            spectrogram: self.spectrogram.clone(),
            params: self.params.cast(),
            layers: self.layers.clone(),
            pitch_boundaries: self.pitch_boundaries.clone(),
            energy_boundaries: self.energy_boundaries.clone(),
        }
    }

    pub fn embed(&self, tape: &mut GradTape<T>, p: &Bound, ids: &[usize]) -> Result<Var> {
        tape.gather_rows(p[self.layers().embedding], ids)
    }

    /// Returns `(block1, block2, u1, u2, fused features)`.
    pub fn encode(&self, tape: &mut GradTape<T>, p: &Bound, x: Var) -> Result<(Var, Var, Var, Var, Var)> {
        let l = self.layers();
        let n = tape.shape(x)[0];
        let f1 = l.block1.forward(tape, p, x)?;
        let f2 = l.block2.forward(tape, p, f1)?;
        let u1 = l.up1.forward(tape, p, f1)?;
        let h = l.up2.forward(tape, p, f2)?;
        let up = tape.conv1d_transposed(h, p[l.up2_weight], Some(p[l.up2_bias]), 2)?;
        let u2 = if tape.shape(up)[0] == n { up } else { tape.slice_rows(up, 0, n)? };
        let cat = tape.concat_cols(&[u1, u2])?;
        let features = l.fuse.forward(tape, p, cat)?;
        Ok((f1, f2, u1, u2, features))
    }

    /// The three heads on encoder features: pitch, energy, and duration
    /// (already rectified).
    pub fn acoustic(&self, tape: &mut GradTape<T>, p: &Bound, features: Var) -> Result<(HeadOutput, HeadOutput, HeadOutput)> {
        let l = self.layers();
        let pitch = l.pitch.forward(tape, p, features)?;
        let energy = l.energy.forward(tape, p, features)?;
        let mut duration = l.duration.forward(tape, p, features)?;
        duration.value = tape.activation(crate::ops::Activation::Relu, duration.value);
        Ok((pitch, energy, duration))
    }

    /// Bin indices for raw pitch and energy values.
    pub fn pitch_bin(&self, hz: f64) -> usize {
        bucketize(hz, &self.pitch_boundaries)
    }

    pub fn energy_bin(&self, energy: f64) -> usize {
        bucketize(energy, &self.energy_boundaries)
    }

    /// Concatenation `(features, z_p, z_e, z_d)` along channels.
    pub fn fuse_acoustic(&self, tape: &mut GradTape<T>, features: Var, z_p: Var, z_e: Var, z_d: Var) -> Result<Var> {
        tape.concat_cols(&[features, z_p, z_e, z_d])
    }

    pub fn decode_mel(&self, tape: &mut GradTape<T>, p: &Bound, x: Var) -> Result<Var> {
        let l = self.layers();
        let mut h = x;
        for block in &l.decoder {
            h = block.forward(tape, p, h)?;
        }
        l.mel_out.forward(tape, p, h)
    }

    pub fn forward(&self, tape: &mut GradTape<T>, p: &Bound, ids: &[usize], cond: Conditioning<'_>) -> Result<ForwardPass> {
        if ids.is_empty() {
            return Err(Error::EmptyInput("phoneme sequence"));
        }
        let n = ids.len();
        for (name, given) in [
            ("durations", cond.durations.map(<[usize]>::len)),
            ("pitch", cond.pitch.map(<[f64]>::len)),
            ("energy", cond.energy.map(<[f64]>::len)),
        ] {
            if let Some(len) = given {
                if len != n {
                    return Err(Error::shape(name, &[len], &[n]));
                }
            }
        }
        let l = self.layers();
        let embedded = self.embed(tape, p, ids)?;
        let (block1, block2, u1, u2, features) = self.encode(tape, p, embedded)?;
        let (pitch, energy, duration) = self.acoustic(tape, p, features)?;

        let pitch_bins: Vec<usize> = match cond.pitch {
            Some(hz) => hz.iter().map(|&v| self.pitch_bin(v)).collect(),
            None => self
                .denormalized(tape, pitch.value, &self.config.pitch_stats)
                .into_iter()
                .map(|v| self.pitch_bin(v))
                .collect(),
        };
        let energy_bins: Vec<usize> = match cond.energy {
            Some(e) => e.iter().map(|&v| self.energy_bin(v)).collect(),
            None => self
                .denormalized(tape, energy.value, &self.config.energy_stats)
                .into_iter()
                .map(|v| self.energy_bin(v))
                .collect(),
        };
        let z_pitch = tape.gather_rows(p[l.pitch_table], &pitch_bins)?;
        let z_energy = tape.gather_rows(p[l.energy_table], &energy_bins)?;
        let z_duration = duration.hidden;
        let fused = self.fuse_acoustic(tape, features, z_pitch, z_energy, z_duration)?;

        let max = self.config.max_duration_per_phoneme;
        let repeats = match cond.durations {
            Some(d) => d.iter().map(|&r| r.min(max)).collect(),
            None => {
                let d: Vec<f64> = tape.value(duration.value).data().iter().map(|v| v.as_f64()).collect();
                regulated_repeats(&d, cond.duration_scale, max)
            }
        };
        let index = repeat_index(&repeats);
        if index.is_empty() {
            return Err(Error::EmptyUtterance);
        }
        let regulated = tape.gather_rows(fused, &index)?;
        let mel = self.decode_mel(tape, p, regulated)?;
        Ok(ForwardPass {
            embedded,
            block1,
            block2,
            u1,
            u2,
            features,
            pitch,
            energy,
            duration: duration.value,
            z_pitch,
            z_energy,
            z_duration,
            fused,
            regulated,
            mel,
            pitch_bins,
            energy_bins,
            repeats,
        })
    }

    fn denormalized(&self, tape: &GradTape<T>, v: Var, stats: &TargetStats) -> Vec<f64> {
        tape.value(v).data().iter().map(|x| stats.denormalize(x.as_f64())).collect()
    }

    /// Inference with predicted durations scaled by `duration_scale`.
    pub fn synthesize(&self, ids: &PhonemeSequence, duration_scale: f64) -> Result<Synthesis<T>> {
        if !(duration_scale > 0.0) {
            return Err(Error::Config(format!("duration scale must be positive, got {duration_scale}")));
        }
        self.run(ids.ids(), Conditioning::predicted(duration_scale))
    }

    /// Inference with externally supplied durations.
    pub fn synthesize_with_durations(&self, ids: &PhonemeSequence, durations: &[usize]) -> Result<Synthesis<T>> {
        self.run(ids.ids(), Conditioning::durations(durations))
    }

    fn run(&self, ids: &[usize], cond: Conditioning<'_>) -> Result<Synthesis<T>> {
        let mut tape = GradTape::inference();
        let p = self.params.bind(&mut tape);
        let fp = self.forward(&mut tape, &p, ids, cond)?;
        let column = |v: Var, stats: &TargetStats| -> Vec<f64> { self.denormalized(&tape, v, stats) };
        let y_pitch = column(fp.pitch.value, &self.config.pitch_stats);
        let y_energy = column(fp.energy.value, &self.config.energy_stats);
        let y_duration = column(fp.duration, &TargetStats::IDENTITY);
        let prediction = AcousticPrediction {
            y_pitch,
            y_energy,
            y_duration,
            z_pitch: tape.value(fp.z_pitch).clone().with_requires_grad(false),
            z_energy: tape.value(fp.z_energy).clone().with_requires_grad(false),
            z_duration: tape.value(fp.z_duration).clone().with_requires_grad(false),
        };
        let mel = tape.take(fp.mel).with_requires_grad(false);
        Ok(Synthesis {
            mel,
            prediction,
            repeats: fp.repeats,
        })
    }
}
