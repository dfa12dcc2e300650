//! Binary checkpoints: an 8-byte magic, a little-endian `u64` manifest length,
//! a TOML manifest, then every parameter tensor as row-major little-endian
//! `f32` in manifest order.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envs::{ScenarioId, ScenarioSpec, TypingMode};
use crate::nn::{ModelParams, ModelShape, SharingMode};

pub const MAGIC: &[u8; 8] = b"HETMARL\x01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("not a checkpoint (bad magic)")]
    Magic,
    #[error("unsupported checkpoint format version {0}")]
    Version(u32),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("tensor {name}: {msg}")]
    Tensor { name: String, msg: String },
    #[error("parameter {0} is not representable in f32")]
    Precision(String),
}

/// Optimiser-side state carried alongside the weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub kl_coeff: f64,
    pub curriculum_on: bool,
    pub curriculum_ema: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub scenario: ScenarioSpec,
    pub typing: TypingMode,
    pub params: ModelParams,
    pub iteration: u64,
    pub rng: ChaCha8Rng,
    pub trainer: TrainerState,
}

#[derive(Debug, Serialize, Deserialize)]
struct RngState {
    seed: String,
    stream: String,
    word_pos: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    scenario_id: ScenarioId,
    sharing_mode: SharingMode,
    typing_mode: TypingMode,
    iteration: u64,
    shape: ModelShape,
    rng: RngState,
    trainer: TrainerState,
    scenario: ScenarioSpec,
    tensors: Vec<TensorEntry>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<[u8; 32]> {
    if s.len() != 64 {
        return None;
    }
    let mut out = [0u8; 32];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).ok()?;
    }
    Some(out)
}

pub fn to_bytes(ck: &Checkpoint) -> Result<Vec<u8>, CheckpointError> {
    let tensors = ck.params.named_tensors();
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        scenario_id: ck.scenario.scenario_id,
        sharing_mode: ck.params.sharing(),
        typing_mode: ck.typing,
        iteration: ck.iteration,
        shape: ck.params.shape.clone(),
        rng: RngState {
            seed: hex(&ck.rng.get_seed()),
            stream: ck.rng.get_stream().to_string(),
            word_pos: ck.rng.get_word_pos().to_string(),
        },
        trainer: ck.trainer,
        scenario: ck.scenario.clone(),
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorEntry { name: name.clone(), rows: t.nrows(), cols: t.ncols() })
            .collect(),
    };
    let text = toml::to_string(&manifest).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + text.len() + 4 * ck.params.num_parameters());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    for (name, t) in tensors {
        for &x in t.iter() {
            let y = x as f32;
            if f64::from(y) != x && x.is_finite() {
                return Err(CheckpointError::Precision(name));
            }
            out.extend_from_slice(&y.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut r = bytes;
    let mut magic = [0u8; 8];
    let short = |_| CheckpointError::Manifest("truncated header".into());
    r.read_exact(&mut magic).map_err(short)?;
    if &magic != MAGIC {
        return Err(CheckpointError::Magic);
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(short)?;
    let len = u64::from_le_bytes(len) as usize;
    if r.len() < len {
        return Err(CheckpointError::Manifest("truncated manifest".into()));
    }
    let text = std::str::from_utf8(&r[..len]).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    r = &r[len..];
    let peek: toml::Table = toml::from_str(text).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    match peek.get("format_version").and_then(toml::Value::as_integer) {
        Some(v) if v == i64::from(FORMAT_VERSION) => {}
        Some(v) => return Err(CheckpointError::Version(v as u32)),
        None => return Err(CheckpointError::Manifest("missing format_version".into())),
    }
    let m: Manifest = toml::from_str(text).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    if m.shape.sharing != m.sharing_mode || m.scenario.scenario_id != m.scenario_id {
        return Err(CheckpointError::Manifest("inconsistent sharing mode or scenario id".into()));
    }

    let mut params = ModelParams::init(m.shape.clone(), &mut ChaCha8Rng::seed_from_u64(0));
    let expected: Vec<(String, (usize, usize))> =
        params.named_tensors().iter().map(|(n, t)| (n.clone(), t.dim())).collect();
    if expected.len() != m.tensors.len() {
        return Err(CheckpointError::Manifest(format!(
            "expected {} tensors, manifest lists {}",
            expected.len(),
            m.tensors.len()
        )));
    }
    for ((name, dim), entry) in expected.iter().zip(&m.tensors) {
        if *name != entry.name || *dim != (entry.rows, entry.cols) {
            return Err(CheckpointError::Tensor {
                name: entry.name.clone(),
                msg: format!("expected {name} with shape {dim:?}"),
            });
        }
    }
    for (t, entry) in params.tensors_mut().into_iter().zip(&m.tensors) {
        let n = entry.rows * entry.cols;
        if r.len() < 4 * n {
            return Err(CheckpointError::Tensor { name: entry.name.clone(), msg: "truncated data".into() });
        }
        for (dst, chunk) in t.iter_mut().zip(r[..4 * n].chunks_exact(4)) {
            *dst = f64::from(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
        }
        r = &r[4 * n..];
    }
    if !r.is_empty() {
        return Err(CheckpointError::Manifest(format!("{} trailing bytes", r.len())));
    }

    let seed = unhex(&m.rng.seed).ok_or_else(|| CheckpointError::Manifest("bad rng seed".into()))?;
    let stream: u64 = m.rng.stream.parse().map_err(|_| CheckpointError::Manifest("bad rng stream".into()))?;
    let word_pos: u128 = m.rng.word_pos.parse().map_err(|_| CheckpointError::Manifest("bad rng word_pos".into()))?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);

    Ok(Checkpoint {
        scenario: m.scenario,
        typing: m.typing_mode,
        params,
        iteration: m.iteration,
        rng,
        trainer: m.trainer,
    })
}

pub fn save(path: &Path, ck: &Checkpoint) -> Result<(), CheckpointError> {
    let bytes = to_bytes(ck)?;
    let io = |source| CheckpointError::Io { path: path.to_path_buf(), source };
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(&bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

/// Load a checkpoint file, or the one named by a directory's `latest` pointer.
pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let io = |source| CheckpointError::Io { path: path.to_path_buf(), source };
    let file = if path.is_dir() {
        let name = fs::read_to_string(path.join("latest")).map_err(io)?;
        path.join(name.trim())
    } else {
        path.to_path_buf()
    };
    let bytes = fs::read(&file).map_err(|source| CheckpointError::Io { path: file.clone(), source })?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::ModelConfig;
    use rand::RngCore;

    fn sample(sharing: SharingMode) -> Checkpoint {
        let spec = ScenarioSpec::default_for(ScenarioId::B);
        let model = ModelConfig { sharing_mode: sharing, width: 8, ..ModelConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let params = ModelParams::init(model.shape(&spec), &mut rng);
        rng.next_u64();
        Checkpoint {
            scenario: spec,
            typing: TypingMode::ExplicitIndex,
            params,
            iteration: 17,
            rng,
            trainer: TrainerState { kl_coeff: 0.02, curriculum_on: true, curriculum_ema: Some(0.5) },
        }
    }

    #[test]
    fn round_trip_is_exact() {
        for sharing in [SharingMode::Shared, SharingMode::PerAgent] {
            let ck = sample(sharing);
            let bytes = to_bytes(&ck).unwrap();
            let back = from_bytes(&bytes).unwrap();
            assert_eq!(back, ck);
            assert_eq!(to_bytes(&back).unwrap(), bytes);
        }
    }

    #[test]
    fn infinite_ranges_survive() {
        let ck = sample(SharingMode::Shared);
        assert!(ck.scenario.comm_range.is_infinite());
        let back = from_bytes(&to_bytes(&ck).unwrap()).unwrap();
        assert!(back.scenario.comm_range.is_infinite());
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let bytes = to_bytes(&sample(SharingMode::Shared)).unwrap();
        assert!(matches!(from_bytes(&bytes[..4]), Err(CheckpointError::Manifest(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(CheckpointError::Magic)));
        assert!(from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
