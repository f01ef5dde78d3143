//! End-to-end gradient check of the composite loss against central
//! finite differences.

use super::data::TrainSample;
use super::loss::LossWeights;
use super::train::sample_loss;
use crate::error::Result;
use crate::gradcheck::relative_error;
use crate::model::TtsModel;
use crate::scalar::Scalar;
use crate::tape::GradTape;

/// Largest step of the extrapolation tableau. Steps shrink by
/// [`STEP_SHRINK`] down to about 5e-5.
pub const GRADCHECK_EPS: f64 = 1e-3;
const STEP_SHRINK: f64 = 1.4;
const TABLEAU: usize = 10;
/// Denominator floor of the relative error: gradients below this magnitude
/// are compared absolutely.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_parameter: String,
    /// Worst relative error of every named parameter, in model order.
    pub per_parameter: Vec<(String, f64)>,
}

/// Derivative of `f` at 0 by Ridders' method: central differences at
/// shrinking steps, extrapolated to zero step. The estimate with the smallest
/// internal error wins, so neither rounding noise at small steps nor a kink
/// inside a large step decides the result. Returns (estimate, error).
pub fn ridders(mut f: impl FnMut(f64) -> Result<f64>, h0: f64) -> Result<(f64, f64)> {
    let mut a = [[0.0f64; TABLEAU]; TABLEAU];
    let mut h = h0;
    let mut central = |h: f64| -> Result<f64> { Ok((f(h)? - f(-h)?) / (2.0 * h)) };
    a[0][0] = central(h)?;
    let (mut best, mut err) = (a[0][0], f64::INFINITY);
    let c2 = STEP_SHRINK * STEP_SHRINK;
    for i in 1..TABLEAU {
        h /= STEP_SHRINK;
        a[0][i] = central(h)?;
        let mut fac = c2;
        for j in 1..=i {
            a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1.0);
            fac *= c2;
            let e = (a[j][i] - a[j - 1][i]).abs().max((a[j][i] - a[j - 1][i - 1]).abs());
            if e <= err {
                err = e;
                best = a[j][i];
            }
        }
        // higher orders stopped helping: rounding has taken over
        if (a[i][i] - a[i - 1][i - 1]).abs() >= 2.0 * err {
            break;
        }
    }
    Ok((best, err))
}

/// Compares tape gradients of the loss on `sample` with extrapolated central
/// differences ([`ridders`]) for every element of every parameter. Meant for tiny configurations.
pub fn gradient_check<T: Scalar>(model: &TtsModel<T>, sample: &TrainSample, weights: &LossWeights) -> Result<GradCheckReport> {
    let loss_of = |m: &TtsModel<T>| -> Result<f64> {
        let mut tape = GradTape::inference();
        let bound = m.params.bind(&mut tape);
        Ok(sample_loss(m, &mut tape, &bound, &[sample], weights)?.1.total)
    };

    let mut tape = GradTape::new();
    let bound = model.params.bind(&mut tape);
    let (loss, _) = sample_loss(model, &mut tape, &bound, &[sample], weights)?;
    tape.backward(loss)?;

    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_parameter: String::new(),
        per_parameter: Vec::new(),
    };
    for id in model.params.ids() {
        let name = model.params.name(id).to_string();
        let analytic: Vec<f64> = match tape.grad(bound[id]) {
            Some(g) => g.iter().map(|v| v.as_f64()).collect(),
            None => vec![0.0; model.params.get(id).numel()],
        };
        let mut worst = 0.0f64;
        for (i, &a) in analytic.iter().enumerate() {
            let orig = probe.params.get(id).data()[i].as_f64();
            let (numeric, _) = ridders(
                |dx| {
                    probe.params.get_mut(id).data_mut()[i] = T::of(orig + dx);
                    loss_of(&probe)
                },
                GRADCHECK_EPS,
            )?;
            probe.params.get_mut(id).data_mut()[i] = T::of(orig);
            worst = worst.max(relative_error(a, numeric, GRADCHECK_FLOOR));
        }
        if worst > report.max_relative_error || report.worst_parameter.is_empty() {
            report.max_relative_error = worst;
            report.worst_parameter = name.clone();
        }
        report.per_parameter.push((name, worst));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::SpectrogramConfig;
    use crate::model::{ModelConfig, PhonemeSequence};
    use crate::rng::Rng;
    use crate::tensor::Tensor;

    pub(crate) fn tiny_case(seed: u64) -> (TtsModel<f64>, TrainSample) {
        let spec = SpectrogramConfig {
            n_mels: 4,
            ..SpectrogramConfig::default()
        };
        let mut model = TtsModel::<f64>::new(ModelConfig::tiny(), spec, seed).unwrap();
        let mut rng = Rng::new(seed + 100);
        let ids: Vec<usize> = (0..3).map(|_| rng.range_inclusive(2, 5)).collect();
        let durations: Vec<usize> = (0..3).map(|_| rng.range_inclusive(1, 3)).collect();
        let m: usize = durations.iter().sum();
        let sample = TrainSample {
            ids: PhonemeSequence::new(ids).unwrap(),
            durations,
            mel: Tensor::new(&[m, 4], (0..m * 4).map(|_| rng.uniform(-3.0, 1.0)).collect()).unwrap(),
            pitch: (0..3).map(|_| rng.uniform(100.0, 300.0)).collect(),
            energy: (0..3).map(|_| rng.uniform(0.0, 5.0)).collect(),
        };
        super::super::train::calibrate(&mut model, std::slice::from_ref(&sample)).unwrap();
        (model, sample)
    }

    #[test]
    fn tiny_model_matches_finite_differences() {
        for seed in 0..5 {
            let (model, sample) = tiny_case(seed);
            let r = gradient_check(&model, &sample, &LossWeights::default()).unwrap();
            println!("seed {seed}: {:.3e} in {}", r.max_relative_error, r.worst_parameter);
            assert!(
                r.max_relative_error <= 1e-4,
                "seed {seed}: {} in {}",
                r.max_relative_error,
                r.worst_parameter
            );
            assert_eq!(r.per_parameter.len(), model.params.len());
        }
    }

    #[test]
    fn ridders_on_smooth_functions() {
        let (d, err) = ridders(|x| Ok((1.3 + x).sin() * (1.3 + x).exp()), 0.1).unwrap();
        let exact = 1.3f64.exp() * (1.3f64.sin() + 1.3f64.cos());
        assert!((d - exact).abs() < 1e-11, "{d} {exact}");
        assert!(err < 1e-9);
        // a kink at 3e-4 inside the first steps
        let (d, _) = ridders(|x| Ok(1e3 * (x - 3e-4).abs() + 2e-9 * x + 35.0), 1e-3).unwrap();
        assert!((d + 1e3).abs() < 1e-6, "{d}");
    }

    #[test]
    #[ignore = "slow sweep; run with --ignored"]
    fn many_seeds_match_finite_differences() {
        let mut worst = 0.0f64;
        for seed in 0..40 {
            let (model, sample) = tiny_case(seed);
            let r = gradient_check(&model, &sample, &LossWeights::default()).unwrap();
            println!("seed {seed}: {:.3e} in {}", r.max_relative_error, r.worst_parameter);
            worst = worst.max(r.max_relative_error);
        }
        assert!(worst <= 1e-4, "{worst}");
    }

    #[test]
    fn muted_term_leaves_its_head_without_gradient() {
        let (model, sample) = tiny_case(1);
        let w = LossWeights {
            beta: 0.0,
            ..LossWeights::default()
        };
        let mut tape = GradTape::new();
        let bound = model.params.bind(&mut tape);
        let (loss, _) = sample_loss(&model, &mut tape, &bound, &[&sample], &w).unwrap();
        tape.backward(loss).unwrap();
        for name in ["acoustic.pitch.out.weight", "acoustic.pitch.out.bias"] {
            let id = model.params.id(name).unwrap();
            let g = tape.grad(bound[id]).unwrap_or(&[]);
            assert!(g.iter().all(|&v| v == 0.0), "{name}: {g:?}");
        }
    }
}
