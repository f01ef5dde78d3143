use std::path::Path;

use proptest::prelude::*;

use tinytts::archive::{decode_weights, encode_weights};
use tinytts::dsp::{decode_wav, encode_wav, hz_to_mel, mel_to_hz, SpectrogramConfig, Waveform};
use tinytts::frontend::words;
use tinytts::model::{bucketize, length_regulate, regulated_repeats, repeat_index, ModelConfig, TtsModel};
use tinytts::ops::{conv1d_forward, conv1d_transposed_forward, layer_norm_forward, softmax_rows, ConvSpec};
use tinytts::training::{lr_at, TrainConfig};
use tinytts::Tensor64;

fn matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Tensor64> {
    (1..=max_rows, 1..=max_cols)
        .prop_flat_map(|(r, c)| prop::collection::vec(-50.0f64..50.0, r * c).prop_map(move |d| Tensor64::new(&[r, c], d).unwrap()))
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(x in matrix(6, 9), shift in -100.0f64..100.0) {
        let y = softmax_rows(&x).unwrap();
        let (r, c) = y.dims2().unwrap();
        for i in 0..r {
            let row = y.row(i);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
        // adding a constant to every logit changes nothing
        let shifted = softmax_rows(&x.map(|v| v + shift)).unwrap();
        prop_assert!(shifted.max_abs_diff(&y) < 1e-12 * c as f64 + 1e-12);
    }

    #[test]
    fn layer_norm_standardizes_rows(x in matrix(5, 12)) {
        let c = x.shape()[1];
        prop_assume!(c >= 2);
        let y = layer_norm_forward(&x, &Tensor64::ones(&[c]), &Tensor64::zeros(&[c]), 1e-5).unwrap();
        for i in 0..x.shape()[0] {
            let row = y.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            prop_assert!(mean.abs() < 1e-9);
            let xr = x.row(i);
            let xm = xr.iter().sum::<f64>() / c as f64;
            let xv = xr.iter().map(|v| (v - xm).powi(2)).sum::<f64>() / c as f64;
            prop_assert!((var - xv / (xv + 1e-5)).abs() < 1e-9, "{} vs {}", var, xv / (xv + 1e-5));
        }
    }

    #[test]
    fn conv_output_length(len in 1usize..40, k in 1usize..6, stride in 1usize..4, padding in 0usize..3, c in 1usize..4) {
        let x = Tensor64::ones(&[len, c]);
        let w = Tensor64::ones(&[2, c, k]);
        let spec = ConvSpec { stride, padding, groups: 1 };
        let span = len + 2 * padding;
        match conv1d_forward(&x, &w, None, spec) {
            Ok(y) => {
                prop_assert!(span >= k);
                prop_assert_eq!(y.shape(), &[(span - k) / stride + 1, 2][..]);
            }
            Err(_) => prop_assert!(span < k),
        }
    }

    #[test]
    fn transposed_conv_inverts_strided_length(len in 1usize..30, stride in 1usize..4) {
        let x = Tensor64::ones(&[len, 3]);
        let w = Tensor64::ones(&[3, 2, stride]);
        let y = conv1d_transposed_forward(&x, &w, None, stride).unwrap();
        prop_assert_eq!(y.shape()[0], len * stride);
    }

    #[test]
    fn length_regulation_copies_rows(
        durations in prop::collection::vec(-1.0f64..6.0, 1..20),
        scale in 0.3f64..2.5,
        max in 1usize..8,
    ) {
        let n = durations.len();
        let x = Tensor64::new(&[n, 2], (0..2 * n).map(|i| i as f64).collect()).unwrap();
        let repeats = regulated_repeats(&durations, scale, max);
        prop_assert!(repeats.iter().all(|&r| r <= max));
        let index = repeat_index(&repeats);
        prop_assert_eq!(index.len(), repeats.iter().sum::<usize>());
        prop_assert!(index.windows(2).all(|w| w[0] <= w[1]));
        match length_regulate(&x, &durations, scale, max) {
            Ok(y) => {
                for (t, &i) in index.iter().enumerate() {
                    prop_assert_eq!(y.row(t), x.row(i));
                }
            }
            Err(_) => prop_assert!(index.is_empty()),
        }
    }

    #[test]
    fn bucketize_is_monotone(a in -10.0f64..1000.0, b in -10.0f64..1000.0) {
        let bounds: Vec<f64> = (0..7).map(|i| 80.0 * 10f64.powf(i as f64 / 6.0)).collect();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(bucketize(lo, &bounds) <= bucketize(hi, &bounds));
        prop_assert!(bucketize(hi, &bounds) <= bounds.len());
    }

    #[test]
    fn mel_scale_inverts(hz in 0.0f64..11025.0) {
        prop_assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9 * (1.0 + hz));
    }

    #[test]
    fn wav_round_trip(samples in prop::collection::vec(-1.0f64..=1.0, 1..500)) {
        let w = Waveform::new(samples, 22050).unwrap();
        let back = decode_wav(&encode_wav(&w)).unwrap();
        prop_assert_eq!(back.samples.len(), w.samples.len());
        for (a, b) in w.samples.iter().zip(&back.samples) {
            prop_assert!((a - b).abs() <= 1.0 / 32767.0);
        }
    }

    #[test]
    fn schedule_stays_within_peak(step in 0usize..2000, warmup in 0usize..100, extra in 1usize..1000) {
        let total = warmup + extra;
        let lr = lr_at(step, 1e-3, warmup, total);
        prop_assert!((0.0..=1e-3 + 1e-18).contains(&lr));
        if step + 1 < warmup {
            prop_assert!(lr_at(step + 1, 1e-3, warmup, total) > lr);
        }
        if step >= warmup {
            prop_assert!(lr_at(step + 1, 1e-3, warmup, total) <= lr);
        }
    }

    #[test]
    fn config_text_round_trip(
        lr in 1e-6f64..1.0,
        warmup in 0usize..100,
        extra in 1usize..500,
        batch in 1usize..64,
        seed in any::<u64>(),
    ) {
        let cfg = TrainConfig { lr, warmup_epochs: warmup, total_epochs: warmup + extra, batch_size: batch, seed, ..TrainConfig::default() };
        prop_assert_eq!(TrainConfig::parse(&cfg.to_text(), Path::new("x.cfg")).unwrap(), cfg);
    }

    #[test]
    fn words_are_lowercase_tokens(text in "[ -~]{0,60}") {
        for w in words(&text) {
            prop_assert!(!w.is_empty());
            prop_assert!(w.chars().all(|c| c.is_alphanumeric() || c == '\''));
            prop_assert_eq!(w.to_lowercase(), w.clone());
            prop_assert!(!w.starts_with('\'') && !w.ends_with('\''));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn archive_round_trip_is_bitwise(seed in any::<u64>()) {
        let spec = SpectrogramConfig { n_mels: 4, ..SpectrogramConfig::default() };
        let m = TtsModel::<f32>::new(ModelConfig::tiny(), spec, seed).unwrap();
        let bytes = encode_weights(&m).unwrap();
        let back: TtsModel<f32> = decode_weights(&bytes).unwrap();
        prop_assert_eq!(&back.params, &m.params);
        prop_assert_eq!(encode_weights(&back).unwrap(), bytes);
    }
}

#[test]
fn default_archive_size_bound() {
    let m = TtsModel::<f32>::new(ModelConfig::default(), SpectrogramConfig::default(), 0).unwrap();
    let bytes = encode_weights(&m).unwrap();
    let params = m.parameter_count();
    assert!(bytes.len() > 4 * params);
    assert!(
        bytes.len() < 4 * params + 64 * 1024,
        "{} bytes for {params} parameters",
        bytes.len()
    );
}
