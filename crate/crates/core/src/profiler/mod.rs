//! Parameter and MAC accounting from the configuration alone, plus
//! wall-clock benchmarks.
//!
//! Convention: one multiply-accumulate counts as one FLOP. Linear layers,
//! convolutions, the transposed convolution and the attention score and
//! context products are counted; embedding lookups, normalization,
//! activations, residual additions and softmax are not.

pub mod bench;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dsp::SpectrogramConfig;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ParamStore};
use crate::scalar::Scalar;

pub use bench::{
    measure_mrtf, measure_rtf, timer_resolution, BenchOptions, BenchResult, GriffinLimVocoder, MelGenerator, SampleTiming, Stats, Vocoder,
};

pub const REPORT_SCHEMA: u32 = 1;

pub const CONVENTION: &str = "1 MAC = 1 FLOP; linear, convolution, transposed convolution and attention score/context \
     products counted; embeddings, normalization, activations, residual adds and softmax not counted";

/// Published figures, shown beside measured values and never asserted.
pub mod reference {
    /// Millions of parameters.
    pub const PARAMS_M: f64 = 0.27;
    /// GFLOPS for an average 6 s utterance.
    pub const GFLOPS: f64 = 0.09;
    pub const VOICE_SECONDS: f64 = 6.0;
    /// (hardware, mel real-time factor).
    pub const MRTF: [(&str, f64); 3] = [("V100", 953.3), ("Xeon 2.2G", 470.2), ("ARM 1.5G (RPi4)", 104.3)];
    /// (hardware, waveform real-time factor, with a neural vocoder).
    pub const RTF: [(&str, f64); 3] = [("V100", 363.0), ("Xeon 2.2G", 24.1), ("ARM 1.5G (RPi4)", 1.7)];
}

/// Phoneme count used with [`reference::VOICE_SECONDS`] when none is given:
/// about 36.7 phonemes per second of speech.
pub const DEFAULT_PHONEMES_6S: usize = 220;

/// One parameterized layer: element count and MACs for the profiled lengths.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    /// Parameter-name prefix of the layer, e.g. `encoder.block1.attention`.
    pub name: String,
    pub block: String,
    pub params: usize,
    pub macs: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockCost {
    pub block: String,
    pub params: usize,
    pub macs: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub schema: u32,
    pub n_phonemes: usize,
    pub n_frames: usize,
    pub audio_seconds: f64,
    pub total_params: usize,
    pub total_macs: u64,
    pub layers: Vec<LayerCost>,
    pub blocks: Vec<BlockCost>,
    pub convention: String,
}

pub const BLOCKS: [&str; 6] = [
    "phoneme encoder",
    "transformer block 1",
    "transformer block 2",
    "upsamplers + fuser",
    "acoustic heads",
    "mel decoder",
];

/// Output length of a 1-D convolution with "same"-style padding.
fn conv_len(len: usize, kernel: usize, stride: usize) -> usize {
    (len + 2 * ((kernel - 1) / 2) - kernel) / stride + 1
}

struct Table {
    rows: Vec<LayerCost>,
}

impl Table {
    fn push(&mut self, block: usize, name: String, params: usize, macs: u64) {
        self.rows.push(LayerCost {
            name,
            block: BLOCKS[block].to_string(),
            params,
            macs,
        });
    }

    fn linear(&mut self, block: usize, name: String, rows: usize, c_in: usize, c_out: usize) {
        self.push(block, name, c_in * c_out + c_out, (rows * c_in * c_out) as u64);
    }

    /// Convolution over `len` input rows; `groups == c_in` is depthwise.
    fn conv(&mut self, block: usize, name: String, len: usize, c_in: usize, c_out: usize, k: usize, stride: usize, groups: usize) -> usize {
        let out = conv_len(len, k, stride);
        self.push(
            block,
            name,
            c_out * (c_in / groups) * k + c_out,
            (out * c_out * (c_in / groups) * k) as u64,
        );
        out
    }

    fn layer_norm(&mut self, block: usize, name: String, c: usize) {
        self.push(block, name, 2 * c, 0);
    }

    fn dwsep(&mut self, block: usize, name: &str, len: usize, c_in: usize, c_out: usize, k: usize, stride: usize) -> usize {
        let out = self.conv(block, format!("{name}.depthwise"), len, c_in, c_in, k, stride, c_in);
        self.conv(block, format!("{name}.pointwise"), out, c_in, c_out, 1, 1, 1)
    }
}

/// The full layer table for `n` phonemes and `m` frames.
pub fn layer_table(cfg: &ModelConfig, n: usize, m: usize) -> Vec<LayerCost> {
    let mut t = Table { rows: Vec::new() };
    let (d, q) = (cfg.d, cfg.quarter());
    t.push(0, "encoder.embedding".into(), cfg.vocab_size * d, 0);

    let mut len = n;
    let mut c_in = d;
    for (b, (name, bc)) in [("encoder.block1", &cfg.block1), ("encoder.block2", &cfg.block2)]
        .into_iter()
        .enumerate()
    {
        let block = b + 1;
        let c = bc.out_dim;
        len = t.dwsep(block, &format!("{name}.merge"), len, c_in, c, bc.merge_kernel, bc.merge_stride);
        for proj in ["q", "k", "v", "out"] {
            t.linear(block, format!("{name}.attention.{proj}"), len, c, c);
        }
        // scores Q K^T and context A V, summed over the head partition
        t.push(block, format!("{name}.attention.scores"), 0, (2 * len * len * c) as u64);
        t.layer_norm(block, format!("{name}.norm1"), c);
        let hidden = c * bc.ffn_expansion;
        t.linear(block, format!("{name}.ffn.expand"), len, c, hidden);
        t.conv(block, format!("{name}.ffn.depthwise"), len, hidden, hidden, 3, 1, hidden);
        t.linear(block, format!("{name}.ffn.project"), len, hidden, c);
        t.layer_norm(block, format!("{name}.norm2"), c);
        c_in = c;
    }
    let n2 = len;
    t.linear(3, "encoder.up1".into(), n, cfg.block1.out_dim, q);
    t.linear(3, "encoder.up2".into(), n2, cfg.block2.out_dim, q);
    t.push(3, "encoder.up2.transposed".into(), q * q * 2 + q, (n2 * q * q * 2) as u64);
    t.linear(3, "encoder.fuse".into(), n, 2 * q, q);

    for head in ["pitch", "energy", "duration"] {
        let name = format!("acoustic.{head}");
        let (h, k) = (cfg.head_hidden, cfg.head_kernel);
        t.conv(4, format!("{name}.conv1"), n, q, h, k, 1, 1);
        t.layer_norm(4, format!("{name}.norm1"), h);
        t.conv(4, format!("{name}.conv2"), n, h, h, k, 1, 1);
        t.layer_norm(4, format!("{name}.norm2"), h);
        t.linear(4, format!("{name}.out"), n, h, 1);
    }
    t.push(4, "acoustic.pitch_table".into(), cfg.n_bins * q, 0);
    t.push(4, "acoustic.energy_table".into(), cfg.n_bins * q, 0);

    for i in 1..=cfg.decoder.n_blocks {
        let name = format!("decoder.block{i}");
        let k = cfg.decoder.kernel;
        t.linear(5, format!("{name}.linear"), m, d, d);
        t.layer_norm(5, format!("{name}.norm0"), d);
        t.dwsep(5, &format!("{name}.conv1"), m, d, d, k, 1);
        t.layer_norm(5, format!("{name}.norm1"), d);
        t.dwsep(5, &format!("{name}.conv2"), m, d, d, k, 1);
        t.layer_norm(5, format!("{name}.norm2"), d);
    }
    t.linear(5, "decoder.mel_out".into(), m, d, cfg.n_mels);
    t.rows
}

fn block_totals(layers: &[LayerCost]) -> Vec<BlockCost> {
    BLOCKS
        .iter()
        .map(|&b| {
            let rows = layers.iter().filter(|l| l.block == b);
            BlockCost {
                block: b.to_string(),
                params: rows.clone().map(|l| l.params).sum(),
                macs: rows.map(|l| l.macs).sum(),
            }
        })
        .collect()
}

/// MACs of the mel path for `n` phonemes and `m` frames.
pub fn count_flops(cfg: &ModelConfig, n: usize, m: usize) -> u64 {
    layer_table(cfg, n, m).iter().map(|l| l.macs).sum()
}

/// Parameters per block of an actual parameter set, grouped by name.
pub fn count_parameters<T: Scalar>(params: &ParamStore<T>) -> Vec<BlockCost> {
    let mut out: Vec<BlockCost> = BLOCKS
        .iter()
        .map(|&b| BlockCost {
            block: b.to_string(),
            params: 0,
            macs: 0,
        })
        .collect();
    for (name, t) in params.iter() {
        let b = block_of(name);
        out[b].params += t.numel();
    }
    out
}

fn block_of(name: &str) -> usize {
    if name.starts_with("encoder.embedding") {
        0
    } else if name.starts_with("encoder.block1") {
        1
    } else if name.starts_with("encoder.block2") {
        2
    } else if name.starts_with("encoder.") {
        3
    } else if name.starts_with("acoustic.") {
        4
    } else {
        5
    }
}

/// Frames produced for `seconds` of audio.
pub fn frames_for_seconds(seconds: f64, spec: &SpectrogramConfig) -> usize {
    ((seconds * spec.sample_rate as f64 / spec.hop_length as f64).round() as usize).max(1)
}

impl ProfileReport {
    pub fn new(cfg: &ModelConfig, spec: &SpectrogramConfig, n: usize, m: usize) -> Result<Self> {
        cfg.validate()?;
        if n == 0 || m == 0 {
            return Err(Error::EmptyInput("profile lengths"));
        }
        let layers = layer_table(cfg, n, m);
        Ok(ProfileReport {
            schema: REPORT_SCHEMA,
            n_phonemes: n,
            n_frames: m,
            audio_seconds: spec.seconds(m),
            total_params: layers.iter().map(|l| l.params).sum(),
            total_macs: layers.iter().map(|l| l.macs).sum(),
            blocks: block_totals(&layers),
            layers,
            convention: CONVENTION.to_string(),
        })
    }

    /// Checks the analytic table against a real parameter set, tensor by
    /// tensor prefix.
    pub fn verify_against<T: Scalar>(&self, params: &ParamStore<T>) -> Result<()> {
        let actual = params.total_elements();
        if actual != self.total_params {
            return Err(Error::Config(format!(
                "analytic parameter count {} disagrees with the model's {actual}",
                self.total_params
            )));
        }
        // every tensor belongs to the table entry with the longest matching
        // name prefix
        let mut sums = vec![0usize; self.layers.len()];
        for (name, t) in params.iter() {
            let owner = self
                .layers
                .iter()
                .enumerate()
                .filter(|(_, l)| {
                    name.strip_prefix(l.name.as_str())
                        .is_some_and(|rest| rest.is_empty() || rest.starts_with('.'))
                })
                .max_by_key(|(_, l)| l.name.len())
                .map(|(i, _)| i)
                .ok_or_else(|| Error::Config(format!("parameter {name} has no profiler entry")))?;
            sums[owner] += t.numel();
        }
        for (layer, &sum) in self.layers.iter().zip(&sums) {
            if sum != layer.params {
                return Err(Error::Config(format!("{}: analytic {} vs actual {sum}", layer.name, layer.params)));
            }
        }
        Ok(())
    }

    pub fn decoder_macs(&self) -> u64 {
        self.blocks.iter().find(|b| b.block == BLOCKS[5]).map_or(0, |b| b.macs)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: ProfileReport = serde_json::from_str(text).map_err(|e| Error::Format(format!("profile report: {e}")))?;
        if r.schema != REPORT_SCHEMA {
            return Err(Error::VersionMismatch {
                found: r.schema,
                expected: REPORT_SCHEMA,
            });
        }
        Ok(r)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<24} {:>12} {:>16}", "block", "params", "MACs");
        for b in &self.blocks {
            let _ = writeln!(s, "{:<24} {:>12} {:>16}", b.block, b.params, b.macs);
        }
        let _ = writeln!(s, "{:<24} {:>12} {:>16}", "total", self.total_params, self.total_macs);
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "input: {} phonemes, {} frames ({:.2} s of audio)",
            self.n_phonemes, self.n_frames, self.audio_seconds
        );
        let _ = writeln!(s, "{:<24} {:>12} {:>12} {:>10}", "", "value", "reference", "relative");
        let params_m = self.total_params as f64 / 1e6;
        let gflops = self.total_macs as f64 / 1e9;
        let _ = writeln!(
            s,
            "{:<24} {:>12.4} {:>12.2} {:>10}",
            "parameters (M)",
            params_m,
            reference::PARAMS_M,
            relative(reference::PARAMS_M, params_m)
        );
        let _ = writeln!(
            s,
            "{:<24} {:>12.4} {:>12.2} {:>10}",
            format!("GFLOPS ({:.1} s)", self.audio_seconds),
            gflops,
            reference::GFLOPS,
            relative(reference::GFLOPS, gflops)
        );
        let _ = writeln!(s, "reference FLOPS are for a {:.0} s average utterance", reference::VOICE_SECONDS);
        let _ = writeln!(s, "convention: {}", self.convention);
        s
    }
}

/// `reference / value` as a percentage.
pub fn relative(reference: f64, value: f64) -> String {
    if value > 0.0 {
        format!("{:.2}%", 100.0 * reference / value)
    } else {
        "-".into()
    }
}
