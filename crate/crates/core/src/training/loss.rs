//! Composite loss `alpha L_mel + beta L_p + gamma L_e + lambda L_d`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{GradTape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 10.0,
            beta: 2.0,
            gamma: 2.0,
            lambda: 1.0,
        }
    }
}

/// Unweighted terms and the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub mel: f64,
    pub pitch: f64,
    pub energy: f64,
    pub duration: f64,
    pub total: f64,
}

/// Predictions of one utterance, as tape handles.
#[derive(Clone, Copy, Debug)]
pub struct PredictionVars {
    /// `(M, n_mels)`.
    pub mel: Var,
    /// `(N, 1)` each.
    pub pitch: Var,
    pub energy: Var,
    pub duration: Var,
}

/// Targets of one utterance. Pitch and energy are in the units the heads
/// predict (normalized), durations in frames.
#[derive(Clone, Debug, PartialEq)]
pub struct LossTargets<T: Scalar> {
    pub mel: Tensor<T>,
    pub pitch: Tensor<T>,
    pub energy: Tensor<T>,
    pub duration: Tensor<T>,
}

/// Loss over a batch. Each term is a mean over all real (unpadded)
/// positions of the batch: the sum of per-utterance error sums divided by
/// the total element count, which equals a masked mean over a right-padded
/// batch.
pub fn batch_loss<T: Scalar>(
    tape: &mut GradTape<T>,
    preds: &[PredictionVars],
    targets: &[&LossTargets<T>],
    w: &LossWeights,
) -> Result<(Var, LossTerms)> {
    if preds.is_empty() || preds.len() != targets.len() {
        return Err(Error::shape("batch_loss", &[preds.len()], &[targets.len()]));
    }
    let (mut mel, mut pitch, mut energy, mut duration) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let (mut n_mel, mut n_ph) = (0usize, 0usize);
    for (p, t) in preds.iter().zip(targets) {
        let (m_pred, m_tgt) = (tape.shape(p.mel)[0], t.mel.shape()[0]);
        if m_pred != m_tgt {
            return Err(Error::Alignment {
                predicted: m_pred,
                target: m_tgt,
            });
        }
        mel.push(tape.abs_error_sum(p.mel, &t.mel)?);
        pitch.push(tape.squared_error_sum(p.pitch, &t.pitch)?);
        energy.push(tape.squared_error_sum(p.energy, &t.energy)?);
        duration.push(tape.squared_error_sum(p.duration, &t.duration)?);
        n_mel += t.mel.numel();
        n_ph += t.duration.numel();
    }
    let mel = mean(tape, &mel, n_mel)?;
    let pitch = mean(tape, &pitch, n_ph)?;
    let energy = mean(tape, &energy, n_ph)?;
    let duration = mean(tape, &duration, n_ph)?;

    let terms = [(mel, w.alpha), (pitch, w.beta), (energy, w.gamma), (duration, w.lambda)];
    let mut total = None;
    for (v, weight) in terms {
        let scaled = tape.scale(v, T::of(weight));
        total = Some(match total {
            None => scaled,
            Some(acc) => tape.add(acc, scaled)?,
        });
    }
    let total = total.expect("four terms");
    let value = |v: Var| tape.value(v).data()[0].as_f64();
    let breakdown = LossTerms {
        mel: value(mel),
        pitch: value(pitch),
        energy: value(energy),
        duration: value(duration),
        total: value(total),
    };
    Ok((total, breakdown))
}

fn mean<T: Scalar>(tape: &mut GradTape<T>, sums: &[Var], count: usize) -> Result<Var> {
    let mut acc = sums[0];
    for &s in &sums[1..] {
        acc = tape.add(acc, s)?;
    }
    Ok(tape.scale(acc, T::one() / T::of_usize(count.max(1))))
}

/// Loss of fixed prediction tensors against targets, outside of training.
pub fn compute_loss<T: Scalar>(
    mel: &Tensor<T>,
    pitch: &Tensor<T>,
    energy: &Tensor<T>,
    duration: &Tensor<T>,
    targets: &LossTargets<T>,
    w: &LossWeights,
) -> Result<LossTerms> {
    let mut tape = GradTape::inference();
    let preds = PredictionVars {
        mel: tape.constant(mel.clone()),
        pitch: tape.constant(pitch.clone()),
        energy: tape.constant(energy.clone()),
        duration: tape.constant(duration.clone()),
    };
    batch_loss(&mut tape, &[preds], &[targets], w).map(|(_, terms)| terms)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn targets() -> LossTargets<f64> {
        LossTargets {
            mel: Tensor::from_rows(&[[0.5, -1.0], [2.0, 0.0], [1.0, 1.0]]),
            pitch: Tensor::from_rows(&[[0.3], [-0.2]]),
            energy: Tensor::from_rows(&[[1.0], [0.0]]),
            duration: Tensor::from_rows(&[[1.0], [2.0]]),
        }
    }

    fn loss(mel_shift: f64, dur_shift: f64, w: &LossWeights) -> LossTerms {
        let t = targets();
        let mel = t.mel.map(|v| v + mel_shift);
        let dur = t.duration.map(|v| v + dur_shift);
        compute_loss(&mel, &t.pitch, &t.energy, &dur, &t, w).unwrap()
    }

    #[test]
    fn exact_prediction_is_zero() {
        assert_eq!(loss(0.0, 0.0, &LossWeights::default()).total, 0.0);
    }

    #[test]
    fn constant_mel_offset() {
        let l = loss(0.1, 0.0, &LossWeights::default());
        assert!((l.total - 1.0).abs() < 1e-12, "{l:?}");
    }

    #[test]
    fn one_frame_duration_error() {
        let l = loss(0.0, 1.0, &LossWeights::default());
        assert!((l.total - 1.0).abs() < 1e-12);
        assert_eq!(l.duration, 1.0);
    }

    #[test]
    fn doubling_alpha_doubles_mel_contribution() {
        let w = LossWeights::default();
        let a = loss(0.3, 0.5, &w);
        let b = loss(0.3, 0.5, &LossWeights { alpha: 2.0 * w.alpha, ..w });
        assert!(((b.total - a.total) - w.alpha * a.mel).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch_is_alignment_error() {
        let t = targets();
        let short = Tensor::from_rows(&[[0.5, -1.0]]);
        let err = compute_loss(&short, &t.pitch, &t.energy, &t.duration, &t, &LossWeights::default()).unwrap_err();
        assert!(matches!(err, Error::Alignment { predicted: 1, target: 3 }));
    }

    #[test]
    fn pooled_batch_equals_masked_padded_mean() {
        // utterances of 1 and 3 frames, padded to 3 with the pad rows masked
        let t1 = LossTargets {
            mel: Tensor::from_rows(&[[1.0, 2.0]]),
            pitch: Tensor::from_rows(&[[0.0]]),
            energy: Tensor::from_rows(&[[0.0]]),
            duration: Tensor::from_rows(&[[1.0]]),
        };
        let t2 = targets();
        let mut tape = GradTape::inference();
        let p1 = PredictionVars {
            mel: tape.constant(Tensor::from_rows(&[[0.0, 0.0]])),
            pitch: tape.constant(Tensor::from_rows(&[[1.0]])),
            energy: tape.constant(Tensor::from_rows(&[[0.0]])),
            duration: tape.constant(Tensor::from_rows(&[[1.0]])),
        };
        let p2 = PredictionVars {
            mel: tape.constant(Tensor::zeros(&[3, 2])),
            pitch: tape.constant(Tensor::zeros(&[2, 1])),
            energy: tape.constant(Tensor::zeros(&[2, 1])),
            duration: tape.constant(Tensor::zeros(&[2, 1])),
        };
        let (_, terms) = batch_loss(&mut tape, &[p1, p2], &[&t1, &t2], &LossWeights::default()).unwrap();
        // masked means written out by hand
        let mel = (3.0 + (0.5 + 1.0 + 2.0 + 0.0 + 1.0 + 1.0)) / 8.0;
        let pitch = (1.0 + 0.09 + 0.04) / 3.0;
        let energy = 1.0 / 3.0;
        let duration = (1.0 + 4.0) / 3.0;
        assert!((terms.mel - mel).abs() < 1e-12);
        assert!((terms.pitch - pitch).abs() < 1e-12);
        assert!((terms.energy - energy).abs() < 1e-12);
        assert!((terms.duration - duration).abs() < 1e-12);
    }
}
