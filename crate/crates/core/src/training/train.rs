//! The training loop.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::data::TrainSample;
use super::loss::{batch_loss, LossTargets, LossTerms, LossWeights, PredictionVars};
use super::optim::{clip_grad_norm, lr_at, AdamState, AdamW};
use crate::error::{Error, Result};
use crate::model::{BinScale, BinSpec, Bound, Conditioning, TargetStats, TtsModel};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tape::{GradTape, Var};
use crate::tensor::Tensor;

/// One optimizer step. `epoch` and `step` count from 0; `lr` is the rate
/// the step was taken with and `grad_norm` the norm before clipping.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub l_mel: f64,
    pub l_p: f64,
    pub l_e: f64,
    pub l_d: f64,
    pub total: f64,
    pub grad_norm: f64,
}

pub fn write_log(rows: &[LogRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(format!("csv: {e}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Fits target normalization to the training set and spans the energy
/// bins over the observed per-phoneme energies. Pitch bins keep their fixed
/// range.
pub fn calibrate<T: Scalar>(model: &mut TtsModel<T>, data: &[TrainSample]) -> Result<()> {
    let pitch: Vec<f64> = data.iter().flat_map(|s| s.pitch.iter().copied()).collect();
    let energy: Vec<f64> = data.iter().flat_map(|s| s.energy.iter().copied()).collect();
    if pitch.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    let (lo, hi) = energy
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let energy_bins = BinSpec {
        min: lo,
        max: if hi > lo { hi } else { lo + 1.0 },
        scale: BinScale::Linear,
    };
    let pitch_bins = model.config.pitch_bins.clone();
    model.set_target_calibration(pitch_bins, energy_bins, TargetStats::fit(&pitch), TargetStats::fit(&energy))
}

/// Targets in the units the heads predict.
pub fn loss_targets<T: Scalar>(model: &TtsModel<T>, sample: &TrainSample) -> Result<LossTargets<T>> {
    let column = |v: Vec<f64>| Tensor::<T>::from_f64(&[v.len(), 1], &v);
    let (ps, es) = (model.config.pitch_stats, model.config.energy_stats);
    Ok(LossTargets {
        mel: sample.mel.cast(),
        pitch: column(sample.pitch.iter().map(|&v| ps.normalize(v)).collect())?,
        energy: column(sample.energy.iter().map(|&v| es.normalize(v)).collect())?,
        duration: column(sample.durations.iter().map(|&d| d as f64).collect())?,
    })
}

/// Teacher-forced forward of a batch and its loss.
pub fn sample_loss<T: Scalar>(
    model: &TtsModel<T>,
    tape: &mut GradTape<T>,
    bound: &Bound,
    batch: &[&TrainSample],
    weights: &LossWeights,
) -> Result<(Var, LossTerms)> {
    let mut preds = Vec::with_capacity(batch.len());
    let mut targets = Vec::with_capacity(batch.len());
    for s in batch {
        let cond = Conditioning::teacher_forced(&s.durations, &s.pitch, &s.energy);
        let fp = model.forward(tape, bound, s.ids.ids(), cond)?;
        preds.push(PredictionVars {
            mel: fp.mel,
            pitch: fp.pitch.value,
            energy: fp.energy.value,
            duration: fp.duration,
        });
        targets.push(loss_targets(model, s)?);
    }
    let refs: Vec<&LossTargets<T>> = targets.iter().collect();
    batch_loss(tape, &preds, &refs, weights)
}

/// Model, optimizer state and schedule; resumable at epoch boundaries.
#[derive(Clone, Debug)]
pub struct Trainer<T: Scalar> {
    pub model: TtsModel<T>,
    pub state: AdamState<T>,
    pub config: TrainConfig,
    pub log: Vec<LogRow>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: TtsModel<T>, config: TrainConfig) -> Result<Self> {
        let state = AdamState::new(&model.params);
        Self::resume(model, state, config)
    }

    pub fn resume(model: TtsModel<T>, state: AdamState<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if state.m.len() != model.params.len() {
            return Err(Error::Config("optimizer state does not match the model".into()));
        }
        Ok(Trainer {
            model,
            state,
            config,
            log: Vec::new(),
        })
    }

    pub fn optimizer(&self) -> AdamW {
        AdamW {
            weight_decay: self.config.weight_decay,
            ..AdamW::default()
        }
    }

    pub fn steps_per_epoch(&self, n_samples: usize) -> usize {
        n_samples.div_ceil(self.config.batch_size)
    }

    /// Sample order of one epoch; depends only on the seed and the epoch so
    /// a resumed run replays the same batches.
    pub fn epoch_order(&self, epoch: usize, n_samples: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n_samples).collect();
        let mut rng = Rng::new(self.config.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        rng.shuffle(&mut order);
        order
    }

    /// Forward, backward, clip and AdamW on one batch. Returns the loss
    /// terms and the pre-clip gradient norm.
    pub fn step(&mut self, batch: &[&TrainSample], lr: f64) -> Result<(LossTerms, f64)> {
        let mut tape = GradTape::new();
        let bound = self.model.params.bind(&mut tape);
        let (loss, terms) = sample_loss(&self.model, &mut tape, &bound, batch, &self.config.weights)?;
        if !terms.total.is_finite() {
            let culprit = tape.first_non_finite().unwrap_or_else(|| "loss".into());
            return Err(Error::NonFinite(culprit));
        }
        tape.backward(loss)?;
        let opt = self.optimizer();
        let params = &mut self.model.params;
        params.zero_grad();
        params.collect_grads(&tape, &bound);
        if let Some((name, _)) = params
            .iter()
            .find(|(_, t)| t.grad().is_some_and(|g| g.iter().any(|x| !x.is_finite())))
        {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
        let norm = clip_grad_norm(params, self.config.grad_clip_norm);
        opt.step(params, &mut self.state, lr);
        Ok((terms, norm))
    }

    /// Trains up to `total_epochs`, continuing from the optimizer step
    /// count. Target calibration happens before the very first step.
    /// `checkpoint` is called after every `checkpoint_every`-th epoch.
    pub fn run(&mut self, data: &[TrainSample], mut checkpoint: impl FnMut(usize, &Self) -> Result<()>) -> Result<()> {
        if data.is_empty() {
            return Err(Error::EmptyInput("training set"));
        }
        let spe = self.steps_per_epoch(data.len());
        let done = self.state.step as usize;
        if !done.is_multiple_of(spe) {
            return Err(Error::Config(format!("optimizer state at step {done} is not on an epoch boundary")));
        }
        if done == 0 {
            calibrate(&mut self.model, data)?;
        }
        let cfg = self.config.clone();
        let (warmup, total) = (cfg.warmup_epochs * spe, cfg.total_epochs * spe);
        for epoch in done / spe..cfg.total_epochs {
            let order = self.epoch_order(epoch, data.len());
            for (k, chunk) in order.chunks(cfg.batch_size).enumerate() {
                let step = epoch * spe + k;
                let lr = lr_at(step, cfg.lr, warmup, total);
                let batch: Vec<&TrainSample> = chunk.iter().map(|&i| &data[i]).collect();
                let (terms, grad_norm) = self.step(&batch, lr)?;
                let row = LogRow {
                    epoch,
                    step,
                    lr,
                    l_mel: terms.mel,
                    l_p: terms.pitch,
                    l_e: terms.energy,
                    l_d: terms.duration,
                    total: terms.total,
                    grad_norm,
                };
                log::debug!("{row:?}");
                self.log.push(row);
            }
            if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
                checkpoint(epoch, self)?;
            }
        }
        Ok(())
    }
}

/// Trains `model` in place from scratch; returns the per-step log.
pub fn train<T: Scalar>(model: &mut TtsModel<T>, data: &[TrainSample], config: &TrainConfig) -> Result<Vec<LogRow>> {
    let mut trainer = Trainer::new(model.clone(), config.clone())?;
    trainer.run(data, |_, _| Ok(()))?;
    *model = trainer.model;
    Ok(trainer.log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::SpectrogramConfig;
    use crate::model::{ModelConfig, PhonemeSequence};
    use crate::training::data::generate_toy_dataset;

    fn toy_model() -> TtsModel<f32> {
        let cfg = ModelConfig {
            n_mels: 80,
            ..ModelConfig::with_width(16, 14)
        };
        TtsModel::new(cfg, SpectrogramConfig::default(), 1).unwrap()
    }

    fn short_run(seed: u64) -> Trainer<f32> {
        let data: Vec<TrainSample> = generate_toy_dataset(3, 2, &SpectrogramConfig::default())
            .unwrap()
            .into_iter()
            .map(|t| t.sample)
            .collect();
        let config = TrainConfig {
            total_epochs: 4,
            warmup_epochs: 1,
            batch_size: 2,
            seed,
            ..TrainConfig::default()
        };
        let mut t = Trainer::new(toy_model(), config).unwrap();
        t.run(&data, |_, _| Ok(())).unwrap();
        t
    }

    #[test]
    fn log_follows_schedule_and_is_reproducible() {
        let a = short_run(3);
        assert_eq!(a.log.len(), 8);
        for r in &a.log {
            assert_eq!(r.lr, lr_at(r.step, 1e-3, 2, 8));
            assert!(r.total.is_finite() && r.grad_norm > 0.0);
        }
        let b = short_run(3);
        assert_eq!(a.log, b.log);
        assert_eq!(a.model.params, b.model.params);
    }

    #[test]
    fn resume_replays_the_same_trajectory() {
        let full = short_run(5);
        let data: Vec<TrainSample> = generate_toy_dataset(3, 2, &SpectrogramConfig::default())
            .unwrap()
            .into_iter()
            .map(|t| t.sample)
            .collect();
        let half = TrainConfig {
            total_epochs: 4,
            warmup_epochs: 1,
            batch_size: 2,
            seed: 5,
            ..TrainConfig::default()
        };
        let mut first = Trainer::new(
            toy_model(),
            TrainConfig {
                total_epochs: 2,
                ..half.clone()
            },
        )
        .unwrap();
        first.run(&data, |_, _| Ok(())).unwrap();
        let mut second = Trainer::resume(first.model.clone(), first.state.clone(), half).unwrap();
        second.run(&data, |_, _| Ok(())).unwrap();
        // the schedule of the first leg ended at 2 epochs, so only the
        // second leg's rows are comparable
        assert_eq!(second.log.len(), 4);
        assert_eq!(second.log[0].step, 4);
        assert!(full.log[4..].iter().zip(&second.log).all(|(a, b)| a.step == b.step && a.lr == b.lr));
    }

    #[test]
    fn resume_through_archives_is_bitwise() {
        use crate::archive::{decode_optimizer, decode_weights, encode_optimizer, encode_weights};
        let data: Vec<TrainSample> = generate_toy_dataset(3, 2, &SpectrogramConfig::default())
            .unwrap()
            .into_iter()
            .map(|t| t.sample)
            .collect();
        let cfg = TrainConfig {
            total_epochs: 4,
            warmup_epochs: 1,
            batch_size: 2,
            checkpoint_every: 2,
            ..TrainConfig::default()
        };
        let mut saved = None;
        let mut full = Trainer::new(toy_model(), cfg.clone()).unwrap();
        full.run(&data, |epoch, t| {
            if epoch == 1 {
                saved = Some((encode_weights(&t.model)?, encode_optimizer(&t.model.params, &t.state)));
            }
            Ok(())
        })
        .unwrap();
        let (w, o) = saved.unwrap();
        let model: TtsModel<f32> = decode_weights(&w).unwrap();
        let state = decode_optimizer(&o, &model.params).unwrap();
        let mut resumed = Trainer::resume(model, state, cfg).unwrap();
        resumed.run(&data, |_, _| Ok(())).unwrap();
        assert_eq!(resumed.log[..], full.log[4..]);
        assert_eq!(resumed.model.params, full.model.params);
    }

    #[test]
    fn non_finite_loss_names_a_tensor() {
        let mut model = toy_model();
        model.params.by_name_mut("decoder.mel_out.bias").unwrap().data_mut()[0] = f32::INFINITY;
        let sample = TrainSample {
            ids: PhonemeSequence::new(vec![2, 3]).unwrap(),
            durations: vec![2, 1],
            mel: Tensor::zeros(&[3, 80]),
            pitch: vec![100.0, 120.0],
            energy: vec![1.0, 2.0],
        };
        let mut t = Trainer::new(model, TrainConfig::default()).unwrap();
        match t.step(&[&sample], 1e-3) {
            Err(Error::NonFinite(name)) => assert!(!name.is_empty()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_header() {
        let mut buf = Vec::new();
        write_log(
            &[LogRow {
                epoch: 0,
                step: 0,
                lr: 0.0,
                l_mel: 1.0,
                l_p: 2.0,
                l_e: 3.0,
                l_d: 4.0,
                total: 5.0,
                grad_norm: 6.0,
            }],
            &mut buf,
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("epoch,step,lr,l_mel,l_p,l_e,l_d,total,grad_norm\n"));
    }
}
