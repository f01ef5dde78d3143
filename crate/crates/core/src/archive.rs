//! Binary persistence: the `ESW1` weight archive, the optimizer-state
//! sidecar and raw mel dumps.
//!
//! Weight archive layout (little-endian):
//!
//! ```text
//! "ESW1" | u32 version | u32 n + n bytes JSON header | u32 tensor count
//! per tensor: u16 n + name | u8 dtype (0 = f32, 1 = f64) | u8 ndim | u32 dims.. | data
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dsp::{MelSpectrogram, SpectrogramConfig};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ParamStore, TtsModel};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::training::AdamState;

pub const WEIGHTS_MAGIC: [u8; 4] = *b"ESW1";
pub const OPTIMIZER_MAGIC: [u8; 4] = *b"ESO1";
pub const MEL_MAGIC: [u8; 4] = *b"ESM1";
pub const FORMAT_VERSION: u32 = 1;

const DTYPE_F32: u8 = 0;
const DTYPE_F64: u8 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveHeader {
    pub model: ModelConfig,
    pub spectrogram: SpectrogramConfig,
    pub pitch_boundaries: Vec<f64>,
    pub energy_boundaries: Vec<f64>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn new(magic: [u8; 4]) -> Self {
        let mut w = Writer(magic.to_vec());
        w.u32(FORMAT_VERSION);
        w
    }

    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }

    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn blob(&mut self, bytes: &[u8]) {
        self.u32(bytes.len() as u32);
        self.0.extend_from_slice(bytes);
    }

    /// Tensor record; `f64` data is narrowed to `f32` when `narrow` is set.
    fn tensor<T: Scalar>(&mut self, name: &str, t: &Tensor<T>, narrow: bool) {
        self.u16(name.len() as u16);
        self.0.extend_from_slice(name.as_bytes());
        let wide = T::BYTES == 8 && !narrow;
        self.u8(if wide { DTYPE_F64 } else { DTYPE_F32 });
        self.u8(t.ndim() as u8);
        for &d in t.shape() {
            self.u32(d as u32);
        }
        for &v in t.data() {
            if wide {
                self.0.extend_from_slice(&v.as_f64().to_le_bytes());
            } else {
                self.0.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Checks magic and version before anything else is parsed.
    fn open(bytes: &'a [u8], magic: [u8; 4]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let found: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        if found != magic {
            return Err(Error::BadMagic { found, expected: magic });
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if available < n {
            return Err(Error::Truncated {
                offset: self.pos,
                needed: n - available,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn blob(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    fn tensor<T: Scalar>(&mut self) -> Result<(String, Tensor<T>)> {
        let n = self.u16()? as usize;
        let name = std::str::from_utf8(self.take(n)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let dtype = self.u8()?;
        let width = match dtype {
            DTYPE_F32 => 4,
            DTYPE_F64 => 8,
            other => return Err(Error::Format(format!("tensor `{name}` has unknown dtype {other}"))),
        };
        let ndim = self.u8()? as usize;
        let shape = (0..ndim).map(|_| self.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let raw = self.take(numel * width)?;
        let data = raw
            .chunks_exact(width)
            .map(|c| match width {
                4 => T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64),
                _ => T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))),
            })
            .collect();
        Ok((name, Tensor::new(&shape, data)?))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

pub fn header_of<T: Scalar>(model: &TtsModel<T>) -> ArchiveHeader {
    ArchiveHeader {
        model: model.config.clone(),
        spectrogram: model.spectrogram.clone(),
        pitch_boundaries: model.pitch_boundaries().to_vec(),
        energy_boundaries: model.energy_boundaries().to_vec(),
    }
}

/// Serializes a model; parameters are stored as `f32`.
pub fn encode_weights<T: Scalar>(model: &TtsModel<T>) -> Result<Vec<u8>> {
    let mut w = Writer::new(WEIGHTS_MAGIC);
    w.blob(&serde_json::to_vec(&header_of(model))?);
    w.u32(model.params.len() as u32);
    for (name, t) in model.params.iter() {
        w.tensor(name, t, true);
    }
    Ok(w.0)
}

pub fn decode_weights<T: Scalar>(bytes: &[u8]) -> Result<TtsModel<T>> {
    let mut r = Reader::open(bytes, WEIGHTS_MAGIC)?;
    let header: ArchiveHeader = serde_json::from_slice(r.blob()?).map_err(|e| Error::Format(format!("config header: {e}")))?;
    let mut model = TtsModel::<T>::new(header.model.clone(), header.spectrogram.clone(), 0)?;
    if model.pitch_boundaries() != header.pitch_boundaries.as_slice() || model.energy_boundaries() != header.energy_boundaries.as_slice() {
        return Err(Error::Format("bin boundaries disagree with the bin configuration".into()));
    }
    let count = r.u32()? as usize;
    if count != model.params.len() {
        return Err(Error::Format(format!(
            "archive holds {count} tensors, config implies {}",
            model.params.len()
        )));
    }
    let mut seen = vec![false; count];
    for _ in 0..count {
        let (name, t) = r.tensor::<T>()?;
        let id = model
            .params
            .id(&name)
            .ok_or_else(|| Error::Format(format!("unexpected tensor `{name}`")))?;
        if std::mem::replace(&mut seen[id.0], true) {
            return Err(Error::Format(format!("duplicate tensor `{name}`")));
        }
        let slot = model.params.get_mut(id);
        if slot.shape() != t.shape() {
            return Err(Error::ArchiveShape {
                name,
                found: t.shape().to_vec(),
                expected: slot.shape().to_vec(),
            });
        }
        *slot = t.with_requires_grad(true);
    }
    r.finish()?;
    Ok(model)
}

/// Human-readable config written beside an archive.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Optimizer state is kept beside the archive, never inside it.
pub fn optimizer_path(path: &Path) -> PathBuf {
    path.with_extension("opt")
}

/// Writes the archive and its JSON config sidecar.
pub fn save_weights<T: Scalar>(model: &TtsModel<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_weights(model)?)?;
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&header_of(model))?)?;
    Ok(())
}

pub fn load_weights<T: Scalar>(path: impl AsRef<Path>) -> Result<TtsModel<T>> {
    decode_weights(&std::fs::read(path)?)
}

/// Adam moments in the parameter order of `params`, at full precision.
pub fn encode_optimizer<T: Scalar>(params: &ParamStore<T>, state: &AdamState<T>) -> Vec<u8> {
    let mut w = Writer::new(OPTIMIZER_MAGIC);
    w.u64(state.step);
    w.u32(2 * params.len() as u32);
    for (k, (name, t)) in params.iter().enumerate() {
        let m = Tensor::new(t.shape(), state.m[k].clone()).expect("moment matches parameter");
        let v = Tensor::new(t.shape(), state.v[k].clone()).expect("moment matches parameter");
        w.tensor(&format!("m/{name}"), &m, false);
        w.tensor(&format!("v/{name}"), &v, false);
    }
    w.0
}

pub fn decode_optimizer<T: Scalar>(bytes: &[u8], params: &ParamStore<T>) -> Result<AdamState<T>> {
    let mut r = Reader::open(bytes, OPTIMIZER_MAGIC)?;
    let step = r.u64()?;
    let count = r.u32()? as usize;
    if count != 2 * params.len() {
        return Err(Error::Format(format!(
            "optimizer state holds {count} tensors, expected {}",
            2 * params.len()
        )));
    }
    let mut state = AdamState::new(params);
    state.step = step;
    for (k, (name, t)) in params.iter().enumerate() {
        for (prefix, slot) in [("m", &mut state.m[k]), ("v", &mut state.v[k])] {
            let (found, moment) = r.tensor::<T>()?;
            let expected = format!("{prefix}/{name}");
            if found != expected {
                return Err(Error::Format(format!("expected `{expected}`, found `{found}`")));
            }
            if moment.shape() != t.shape() {
                return Err(Error::ArchiveShape {
                    name: found,
                    found: moment.shape().to_vec(),
                    expected: t.shape().to_vec(),
                });
            }
            *slot = moment.into_data();
        }
    }
    r.finish()?;
    Ok(state)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MelHeader {
    pub n_frames: usize,
    pub n_mels: usize,
    pub hop_length: usize,
    pub sample_rate: u32,
    /// Natural-log mel, frame-major `f32` follows the header.
    pub scale: String,
}

/// `ESM1 | u32 version | u32 n + JSON header | f32 frames`.
pub fn encode_mel<T: Scalar>(mel: &MelSpectrogram<T>) -> Result<Vec<u8>> {
    let header = MelHeader {
        n_frames: mel.n_frames(),
        n_mels: mel.n_mels(),
        hop_length: mel.hop_length,
        sample_rate: mel.sample_rate,
        scale: "ln".into(),
    };
    let mut w = Writer::new(MEL_MAGIC);
    w.blob(&serde_json::to_vec(&header)?);
    for &v in mel.frames.data() {
        w.0.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    Ok(w.0)
}

pub fn decode_mel(bytes: &[u8]) -> Result<MelSpectrogram<f32>> {
    let mut r = Reader::open(bytes, MEL_MAGIC)?;
    let header: MelHeader = serde_json::from_slice(r.blob()?).map_err(|e| Error::Format(format!("mel header: {e}")))?;
    let raw = r.take(header.n_frames * header.n_mels * 4)?;
    r.finish()?;
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(MelSpectrogram {
        frames: Tensor::new(&[header.n_frames, header.n_mels], data)?,
        hop_length: header.hop_length,
        sample_rate: header.sample_rate,
    })
}
