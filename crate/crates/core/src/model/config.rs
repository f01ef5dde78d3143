use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One pyramid transformer stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub out_dim: usize,
    pub merge_kernel: usize,
    pub merge_stride: usize,
    pub heads: usize,
    pub ffn_expansion: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub n_blocks: usize,
    pub kernel: usize,
}

/// Affine normalization applied to a regression target: the head predicts
/// `(value - mean) / std`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetStats {
    pub mean: f64,
    pub std: f64,
}

impl TargetStats {
    pub const IDENTITY: TargetStats = TargetStats { mean: 0.0, std: 1.0 };

    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }

    /// Mean and population standard deviation; `std` falls back to 1 for
    /// constant data.
    pub fn fit(values: &[f64]) -> TargetStats {
        if values.is_empty() {
            return TargetStats::IDENTITY;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        TargetStats {
            mean,
            std: if std > 1e-8 { std } else { 1.0 },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinScale {
    Linear,
    Geometric,
}

/// Quantization of a scalar acoustic value into `n_bins` buckets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    pub min: f64,
    pub max: f64,
    pub scale: BinScale,
}

impl BinSpec {
    /// The `n_bins - 1` interior boundaries, spaced linearly or
    /// geometrically between `min` and `max` inclusive.
    pub fn boundaries(&self, n_bins: usize) -> Vec<f64> {
        let k = n_bins - 1;
        if k == 1 {
            return vec![match self.scale {
                BinScale::Linear => 0.5 * (self.min + self.max),
                BinScale::Geometric => (self.min * self.max).sqrt(),
            }];
        }
        (0..k)
            .map(|i| {
                let t = i as f64 / (k - 1) as f64;
                match self.scale {
                    BinScale::Linear => self.min + t * (self.max - self.min),
                    BinScale::Geometric => self.min * (self.max / self.min).powf(t),
                }
            })
            .collect()
    }
}

/// Bucket index: the number of boundaries strictly below `v`. Values below
/// the range land in bin 0 and above it in the last bin.
pub fn bucketize(v: f64, boundaries: &[f64]) -> usize {
    boundaries.partition_point(|&b| b < v)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Embedding width.
    pub d: usize,
    pub vocab_size: usize,
    pub n_mels: usize,
    pub block1: BlockConfig,
    pub block2: BlockConfig,
    pub head_kernel: usize,
    pub head_hidden: usize,
    pub n_bins: usize,
    pub pitch_bins: BinSpec,
    pub energy_bins: BinSpec,
    pub pitch_stats: TargetStats,
    pub energy_stats: TargetStats,
    pub decoder: DecoderConfig,
    pub max_duration_per_phoneme: usize,
}

/// Reserved ids plus the 69 stress-marked ARPAbet symbols.
pub const DEFAULT_VOCAB: usize = 71;

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::with_width(128, DEFAULT_VOCAB)
    }
}

impl ModelConfig {
    /// The default layout scaled to embedding width `d`.
    pub fn with_width(d: usize, vocab_size: usize) -> Self {
        ModelConfig {
            d,
            vocab_size,
            n_mels: 80,
            block1: BlockConfig {
                out_dim: d / 4,
                merge_kernel: 3,
                merge_stride: 1,
                heads: 1,
                ffn_expansion: 2,
            },
            block2: BlockConfig {
                out_dim: d / 2,
                merge_kernel: 3,
                merge_stride: 2,
                heads: 2,
                ffn_expansion: 2,
            },
            head_kernel: 3,
            head_hidden: d / 4,
            n_bins: 256,
            pitch_bins: BinSpec {
                min: 80.0,
                max: 800.0,
                scale: BinScale::Geometric,
            },
            energy_bins: BinSpec {
                min: 0.0,
                max: 1.0,
                scale: BinScale::Linear,
            },
            pitch_stats: TargetStats::IDENTITY,
            energy_stats: TargetStats::IDENTITY,
            decoder: DecoderConfig { n_blocks: 2, kernel: 3 },
            max_duration_per_phoneme: 50,
        }
    }

    /// The smallest useful configuration, used by gradient checks.
    pub fn tiny() -> Self {
        ModelConfig {
            n_mels: 4,
            n_bins: 4,
            ..ModelConfig::with_width(8, 6)
        }
    }

    pub fn quarter(&self) -> usize {
        self.d / 4
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.d == 0 || !self.d.is_multiple_of(4) {
            return bad(format!("d = {} must be a positive multiple of 4", self.d));
        }
        if self.block1.out_dim != self.d / 4 {
            return bad(format!("block1.out_dim must be d/4 = {}", self.d / 4));
        }
        if self.block2.out_dim != 2 * self.block1.out_dim {
            return bad("block2.out_dim must be twice block1.out_dim".into());
        }
        for (name, b) in [("block1", &self.block1), ("block2", &self.block2)] {
            if b.heads == 0 || b.out_dim % b.heads != 0 {
                return bad(format!("{name}: {} heads do not divide {}", b.heads, b.out_dim));
            }
            if b.merge_kernel % 2 == 0 || b.merge_stride == 0 || b.ffn_expansion == 0 {
                return bad(format!("{name}: kernel must be odd, stride and expansion >= 1"));
            }
        }
        if self.block1.merge_stride != 1 {
            return bad("block1 must keep the sequence length (stride 1)".into());
        }
        if self.head_hidden != self.d / 4 {
            return bad("head_hidden must be d/4 so the fused features are d wide".into());
        }
        if self.head_kernel.is_multiple_of(2) || self.decoder.kernel.is_multiple_of(2) {
            return bad("acoustic head and decoder kernels must be odd".into());
        }
        if self.n_bins < 2 {
            return bad("n_bins must be at least 2".into());
        }
        if self.vocab_size < 3 || self.n_mels == 0 || self.decoder.n_blocks == 0 {
            return bad("vocab_size >= 3, n_mels >= 1 and decoder.n_blocks >= 1 required".into());
        }
        if self.pitch_bins.min <= 0.0 && self.pitch_bins.scale == BinScale::Geometric {
            return bad("geometric bins need a positive minimum".into());
        }
        for bins in [&self.pitch_bins, &self.energy_bins] {
            if !(bins.max > bins.min) {
                return bad(format!("bin range [{}, {}] is empty", bins.min, bins.max));
            }
        }
        for stats in [&self.pitch_stats, &self.energy_stats] {
            if !(stats.std > 0.0) || !stats.mean.is_finite() {
                return bad("target statistics need a finite mean and positive std".into());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ModelConfig::default().validate().unwrap();
        ModelConfig::tiny().validate().unwrap();
        ModelConfig::with_width(256, 71).validate().unwrap();
    }

    #[test]
    fn rejects_inconsistent_blocks() {
        let mut c = ModelConfig::default();
        c.block2.heads = 3;
        assert!(c.validate().is_err());
        let c = ModelConfig {
            d: 130,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn bucketize_clamps_at_edges() {
        let spec = BinSpec {
            min: 80.0,
            max: 800.0,
            scale: BinScale::Geometric,
        };
        let b = spec.boundaries(256);
        assert_eq!(b.len(), 255);
        assert!((b[0] - 80.0).abs() < 1e-9 && (b[254] - 800.0).abs() < 1e-9);
        assert!(b.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(bucketize(10.0, &b), 0);
        assert_eq!(bucketize(5000.0, &b), 255);
        assert_eq!(bucketize(80.0, &b), 0);
    }

    #[test]
    fn stats_round_trip() {
        let s = TargetStats::fit(&[100.0, 200.0, 300.0]);
        assert!((s.mean - 200.0).abs() < 1e-12);
        assert!((s.denormalize(s.normalize(123.0)) - 123.0).abs() < 1e-9);
        assert_eq!(TargetStats::fit(&[5.0, 5.0]).std, 1.0);
    }
}
