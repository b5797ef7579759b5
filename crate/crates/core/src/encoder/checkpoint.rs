//! Binary checkpoint files.
//!
//! ```text
//! magic "MLMKCKPT" | u32 version
//! u32 n | n bytes   encoder config (TOML)
//! 32 bytes          vocabulary hash (SHA-256)
//! u8                output projection tied to word embeddings (always 1)
//! u32 n | n bytes   free-form metadata (TOML, may be empty)
//! u8                optimizer state present
//!   [u64 adam_t]    when present
//! u64 count, then per tensor:
//!   u32 n | name | u8 decay | u8 dtype | u32 rank | rank x u64 dims | data
//!   (when optimizer state is present, each tensor is followed by its first
//!    and second moments in the same dtype)
//! 32 bytes          SHA-256 of everything above
//! ```
//!
//! Integers and floats are little-endian.

use std::path::{Path, PathBuf};

use tensorcore::{AdamConfig, AdamState, DType, Float, ParamStore, Tensor};

use super::{EncoderConfig, EncoderError};
use crate::util::{sha256, write_atomic};

const MAGIC: &[u8; 8] = b"MLMKCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub config: EncoderConfig,
    /// Hex SHA-256 of the vocabulary file the model was trained with.
    pub vocab_hash: String,
    pub params: ParamStore<T>,
    pub adam: Option<AdamState<T>>,
    /// Caller-defined TOML metadata (training step, task head, ...).
    pub meta: String,
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: not a checkpoint file (bad magic)", path.display())]
    Magic { path: PathBuf },
    #[error("{}: checksum mismatch (file truncated or corrupted)", path.display())]
    Checksum { path: PathBuf },
    #[error("{}: unsupported checkpoint version {found} (expected {CHECKPOINT_VERSION})", path.display())]
    Version { path: PathBuf, found: u32 },
    #[error("{}: vocabulary hash {found} does not match expected {expected}", path.display())]
    VocabMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("{}: malformed checkpoint: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    put_u32(out, b.len() as u32);
    out.extend_from_slice(b);
}

fn put_tensor<T: Float>(out: &mut Vec<u8>, t: &Tensor<T>) {
    out.push(T::DTYPE.tag());
    put_u32(out, t.rank() as u32);
    for &d in t.shape() {
        put_u64(out, d as u64);
    }
    for &v in t.data() {
        v.write_le(out);
    }
}

pub fn encode_checkpoint<T: Float>(ck: &Checkpoint<T>) -> Result<Vec<u8>, EncoderError> {
    let hash = hex::decode(&ck.vocab_hash)
        .ok()
        .filter(|h| h.len() == 32)
        .ok_or_else(|| EncoderError::InvalidInput(format!("vocab hash {:?} is not 64 hex digits", ck.vocab_hash)))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    put_bytes(&mut out, ck.config.to_toml().as_bytes());
    out.extend_from_slice(&hash);
    out.push(1);
    put_bytes(&mut out, ck.meta.as_bytes());
    match &ck.adam {
        Some(a) => {
            if a.m.len() != ck.params.len() || a.v.len() != ck.params.len() {
                return Err(EncoderError::InvalidInput(
                    "optimizer state does not match parameters".into(),
                ));
            }
            out.push(1);
            put_u64(&mut out, a.t);
        }
        None => out.push(0),
    }
    put_u64(&mut out, ck.params.len() as u64);
    for (i, p) in ck.params.iter().enumerate() {
        put_bytes(&mut out, p.name.as_bytes());
        out.push(p.decay as u8);
        put_tensor(&mut out, &p.tensor);
        if let Some(a) = &ck.adam {
            put_tensor(&mut out, &a.m[i]);
            put_tensor(&mut out, &a.v[i]);
        }
    }
    let digest = sha256(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        if self.bytes.len() - self.pos < n {
            return Err(format!("unexpected end of data at byte {}", self.pos));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn bytes(&mut self) -> Result<&'a [u8], String> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    fn string(&mut self) -> Result<String, String> {
        String::from_utf8(self.bytes()?.to_vec()).map_err(|_| "invalid UTF-8 string".to_string())
    }

    fn tensor<T: Float>(&mut self) -> Result<Tensor<T>, String> {
        let dtype = DType::from_tag(self.u8()?).ok_or("unknown dtype tag")?;
        let rank = self.u32()? as usize;
        let shape = (0..rank)
            .map(|_| self.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let raw = self.take(n.checked_mul(dtype.size_of()).ok_or("tensor too large")?)?;
        let data: Vec<T> = match dtype {
            DType::F32 => raw
                .chunks_exact(4)
                .map(|c| T::from_f64(f32::read_le(c) as f64))
                .collect(),
            DType::F64 => raw.chunks_exact(8).map(|c| T::from_f64(f64::read_le(c))).collect(),
        };
        Tensor::new(shape, data).map_err(|e| e.to_string())
    }
}

/// Parses checkpoint bytes. `path` only labels errors.
pub fn decode_checkpoint<T: Float>(
    bytes: &[u8],
    path: &Path,
    expected_vocab_hash: Option<&str>,
) -> Result<Checkpoint<T>, CheckpointError> {
    let path_buf = || path.to_path_buf();
    if bytes.len() >= MAGIC.len() && &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::Magic { path: path_buf() });
    }
    if bytes.len() < MAGIC.len() + 4 + 32 {
        return Err(CheckpointError::Checksum { path: path_buf() });
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if sha256(body) != digest {
        return Err(CheckpointError::Checksum { path: path_buf() });
    }
    let mut r = Reader {
        bytes: body,
        pos: MAGIC.len(),
    };
    let format = |msg: String| CheckpointError::Format {
        path: path.to_path_buf(),
        msg,
    };
    let version = r.u32().map_err(format)?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version {
            path: path_buf(),
            found: version,
        });
    }
    let parse = || -> Result<Checkpoint<T>, String> {
        let mut r = Reader {
            bytes: body,
            pos: r.pos,
        };
        let config_text = r.string()?;
        let config: EncoderConfig = toml::from_str(&config_text).map_err(|e| format!("config block: {e}"))?;
        let vocab_hash = hex::encode(r.take(32)?);
        if r.u8()? != 1 {
            return Err("untied output projection is not supported".into());
        }
        let meta = r.string()?;
        let adam_t = match r.u8()? {
            0 => None,
            1 => Some(r.u64()?),
            x => return Err(format!("bad optimizer flag {x}")),
        };
        let count = r.u64()? as usize;
        let mut params = ParamStore::new();
        let (mut m, mut v) = (Vec::new(), Vec::new());
        for _ in 0..count {
            let name = r.string()?;
            if params.position(&name).is_some() {
                return Err(format!("duplicate tensor {name}"));
            }
            let decay = match r.u8()? {
                0 => false,
                1 => true,
                x => return Err(format!("bad decay flag {x} for {name}")),
            };
            let t = r.tensor::<T>()?;
            if adam_t.is_some() {
                let (mt, vt) = (r.tensor::<T>()?, r.tensor::<T>()?);
                if mt.shape() != t.shape() || vt.shape() != t.shape() {
                    return Err(format!("moment shape mismatch for {name}"));
                }
                m.push(mt);
                v.push(vt);
            }
            params.push(name, t, decay);
        }
        if r.pos != body.len() {
            return Err(format!("{} trailing bytes", body.len() - r.pos));
        }
        Ok(Checkpoint {
            config,
            vocab_hash,
            params,
            adam: adam_t.map(|t| AdamState {
                config: AdamConfig::default(),
                m,
                v,
                t,
            }),
            meta,
        })
    };
    let ck = parse().map_err(format)?;
    if let Some(expected) = expected_vocab_hash {
        if !expected.eq_ignore_ascii_case(&ck.vocab_hash) {
            return Err(CheckpointError::VocabMismatch {
                path: path_buf(),
                expected: expected.to_string(),
                found: ck.vocab_hash,
            });
        }
    }
    Ok(ck)
}

pub fn save_checkpoint<T: Float>(ck: &Checkpoint<T>, path: &Path) -> Result<(), EncoderError> {
    let bytes = encode_checkpoint(ck)?;
    write_atomic(path, &bytes).map_err(|source| {
        EncoderError::Checkpoint(CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })
    })
}

/// Loads a checkpoint; with `expected_vocab_hash` set, refuses a checkpoint
/// trained under a different vocabulary.
pub fn load_checkpoint<T: Float>(
    path: &Path,
    expected_vocab_hash: Option<&str>,
) -> Result<Checkpoint<T>, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_checkpoint(&bytes, path, expected_vocab_hash)
}
