//! Binary shard files plus a TOML manifest.
//!
//! Each record is `u32 body_len` followed by the body
//! `u32 L | L x u32 input_ids | L x u32 labels | L x u8 attention_mask`,
//! all little-endian, with label `u32::MAX` meaning "not masked".
//!
//! Manifest fields: `format_version`, `config_hash`, `vocab_hash`,
//! `max_len`, `total`, and one `[[shards]]` table per file with `file`,
//! `count` and `sha256`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DataprepError, MaskingConfig, PretrainExample};
use crate::util::{sha256_hex, write_atomic};

pub const MANIFEST_FILE: &str = "manifest.toml";
const FORMAT_VERSION: u32 = 1;
const IGNORE: u32 = u32::MAX;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShardEntry {
    pub file: String,
    pub count: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub config_hash: String,
    pub vocab_hash: String,
    pub max_len: usize,
    pub total: usize,
    pub shards: Vec<ShardEntry>,
}

/// Hash of everything that determines the generated examples besides the
/// corpus and vocabulary.
pub fn dataprep_config_hash(max_len: usize, masking: &MaskingConfig) -> String {
    #[derive(Serialize)]
    struct Key<'a> {
        max_len: usize,
        masking: &'a MaskingConfig,
    }
    let text = toml::to_string(&Key { max_len, masking }).expect("config serializes");
    sha256_hex(text.as_bytes())
}

fn encode_record(e: &PretrainExample, buf: &mut Vec<u8>) {
    let l = e.input_ids.len();
    let body_len = 4 + l * 9;
    buf.extend_from_slice(&(body_len as u32).to_le_bytes());
    buf.extend_from_slice(&(l as u32).to_le_bytes());
    for &id in &e.input_ids {
        buf.extend_from_slice(&id.to_le_bytes());
    }
    for l in &e.labels {
        buf.extend_from_slice(&l.unwrap_or(IGNORE).to_le_bytes());
    }
    buf.extend(e.attention_mask.iter().map(|&m| m as u8));
}

fn decode_records(bytes: &[u8], path: &Path) -> Result<Vec<PretrainExample>, DataprepError> {
    let corrupt = |msg: String| DataprepError::Corrupt {
        path: path.to_path_buf(),
        msg,
    };
    let u32_at = |b: &[u8], at: usize| u32::from_le_bytes(b[at..at + 4].try_into().unwrap());
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        if bytes.len() - pos < 8 {
            return Err(corrupt(format!("truncated record header at byte {pos}")));
        }
        let body_len = u32_at(bytes, pos) as usize;
        let l = u32_at(bytes, pos + 4) as usize;
        if body_len != 4 + 9 * l || bytes.len() - pos - 4 < body_len {
            return Err(corrupt(format!("bad record length at byte {pos}")));
        }
        let body = &bytes[pos + 8..pos + 4 + body_len];
        let input_ids = (0..l).map(|i| u32_at(body, 4 * i)).collect();
        let labels = (0..l)
            .map(|i| match u32_at(body, 4 * (l + i)) {
                IGNORE => None,
                v => Some(v),
            })
            .collect();
        let mut attention_mask = Vec::with_capacity(l);
        for &m in &body[8 * l..9 * l] {
            match m {
                0 => attention_mask.push(false),
                1 => attention_mask.push(true),
                _ => return Err(corrupt(format!("bad mask byte in record at byte {pos}"))),
            }
        }
        out.push(PretrainExample {
            input_ids,
            attention_mask,
            labels,
        });
        pos += 4 + body_len;
    }
    Ok(out)
}

/// Writes `examples` as `shard-00000.bin, ..` of at most `shard_size`
/// records each, plus `manifest.toml`, into `dir`.
pub fn write_pretrain_shards<'a, I>(
    examples: I,
    dir: &Path,
    shard_size: usize,
    max_len: usize,
    config_hash: &str,
    vocab_hash: &str,
) -> Result<Manifest, DataprepError>
where
    I: IntoIterator<Item = &'a PretrainExample>,
{
    if shard_size == 0 {
        return Err(DataprepError::InvalidConfig("shard_size must be positive".into()));
    }
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| DataprepError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let mut manifest = Manifest {
        format_version: FORMAT_VERSION,
        config_hash: config_hash.to_string(),
        vocab_hash: vocab_hash.to_string(),
        max_len,
        total: 0,
        shards: Vec::new(),
    };
    let mut buf = Vec::new();
    let mut count = 0;
    let flush = |buf: &mut Vec<u8>, count: &mut usize, manifest: &mut Manifest| {
        let file = format!("shard-{:05}.bin", manifest.shards.len());
        let path = dir.join(&file);
        write_atomic(&path, buf).map_err(io(&path))?;
        manifest.shards.push(ShardEntry {
            file,
            count: *count,
            sha256: sha256_hex(buf),
        });
        manifest.total += *count;
        buf.clear();
        *count = 0;
        Ok::<_, DataprepError>(())
    };
    for e in examples {
        if e.input_ids.len() != max_len {
            return Err(DataprepError::InvalidConfig(format!(
                "example of length {} in a max_len {max_len} shard set",
                e.input_ids.len()
            )));
        }
        encode_record(e, &mut buf);
        count += 1;
        if count == shard_size {
            flush(&mut buf, &mut count, &mut manifest)?;
        }
    }
    if count > 0 {
        flush(&mut buf, &mut count, &mut manifest)?;
    }
    let path = dir.join(MANIFEST_FILE);
    let text = toml::to_string(&manifest).expect("manifest serializes");
    write_atomic(&path, text.as_bytes()).map_err(io(&path))?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<Manifest, DataprepError> {
    let text = std::fs::read_to_string(path).map_err(|source| DataprepError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let m: Manifest = toml::from_str(&text).map_err(|e| DataprepError::Corrupt {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    if m.format_version != FORMAT_VERSION {
        return Err(DataprepError::Corrupt {
            path: path.to_path_buf(),
            msg: format!("unsupported format_version {}", m.format_version),
        });
    }
    Ok(m)
}

/// Reads a manifest (given its path, or the directory holding it) and all of
/// its shards, verifying checksums and counts.
pub fn read_pretrain_shards(path: &Path) -> Result<(Manifest, Vec<PretrainExample>), DataprepError> {
    let manifest_path: PathBuf = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let manifest = read_manifest(&manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut examples = Vec::with_capacity(manifest.total);
    for shard in &manifest.shards {
        let p = dir.join(&shard.file);
        let bytes = std::fs::read(&p).map_err(|source| DataprepError::Io {
            path: p.clone(),
            source,
        })?;
        if sha256_hex(&bytes) != shard.sha256 {
            return Err(DataprepError::Corrupt {
                path: p,
                msg: "checksum mismatch".into(),
            });
        }
        let records = decode_records(&bytes, &p)?;
        if records.len() != shard.count {
            return Err(DataprepError::Corrupt {
                path: p,
                msg: format!("{} records, manifest says {}", records.len(), shard.count),
            });
        }
        examples.extend(records);
    }
    Ok((manifest, examples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_examples(n: usize, l: usize) -> Vec<PretrainExample> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        (0..n)
            .map(|_| PretrainExample {
                input_ids: (0..l).map(|_| rng.gen_range(0..5000)).collect(),
                attention_mask: (0..l).map(|_| rng.gen()).collect(),
                labels: (0..l)
                    .map(|_| rng.gen_bool(0.2).then(|| rng.gen_range(0..5000)))
                    .collect(),
            })
            .collect()
    }

    #[test]
    fn thousand_examples_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ex = random_examples(1000, 16);
        let m = write_pretrain_shards(&ex, dir.path(), 300, 16, "c", "v").unwrap();
        assert_eq!(m.total, 1000);
        let (m2, back) = read_pretrain_shards(dir.path()).unwrap();
        assert_eq!(m, m2);
        assert_eq!(back, ex);
    }

    #[test]
    fn shard_counts() {
        let dir = tempfile::tempdir().unwrap();
        let ex = random_examples(250, 8);
        let m = write_pretrain_shards(&ex, dir.path(), 100, 8, "c", "v").unwrap();
        let counts: Vec<_> = m.shards.iter().map(|s| s.count).collect();
        assert_eq!(counts, vec![100, 100, 50]);
    }

    #[test]
    fn config_hash_tracks_mask_rate() {
        let a = MaskingConfig::default();
        let b = MaskingConfig {
            mask_rate: 0.2,
            ..a.clone()
        };
        assert_ne!(dataprep_config_hash(128, &a), dataprep_config_hash(128, &b));
        assert_ne!(dataprep_config_hash(128, &a), dataprep_config_hash(512, &a));
        assert_eq!(dataprep_config_hash(128, &a), dataprep_config_hash(128, &a.clone()));
    }

    #[test]
    fn corrupted_shard_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let ex = random_examples(10, 8);
        write_pretrain_shards(&ex, dir.path(), 100, 8, "c", "v").unwrap();
        let p = dir.path().join("shard-00000.bin");
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[9] ^= 1;
        std::fs::write(&p, bytes).unwrap();
        match read_pretrain_shards(dir.path()) {
            Err(DataprepError::Corrupt { path, .. }) => assert_eq!(path, p),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_directory_names_path() {
        let err = read_pretrain_shards(Path::new("/nonexistent/shards")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/shards"));
    }
}
