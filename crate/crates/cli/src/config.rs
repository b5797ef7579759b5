use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mlmkit::dataprep::MaskingConfig;
use mlmkit::encoder::EncoderConfig;
use mlmkit::heads::{QaConfig, TaskKind, WindowingConfig};
use mlmkit::metrics::{MetricKind, QaNormalization};
use mlmkit::tokenizer::NormalizationConfig;
use mlmkit::trainer::{FinetuneGrid, PretrainSchedule};
use mlmkit::util::sha256_hex;
use serde::{Deserialize, Serialize};

pub const CONFIG_DIR_ENV: &str = "MLMKIT_CONFIG_DIR";
pub const DEFAULT_CONFIG: &str = "mlmkit.toml";

/// The whole pipeline configuration. Every command reads the sections it
/// needs and ignores the rest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Recorded in outputs; every code path is deterministic.
    #[serde(default = "yes")]
    pub deterministic: bool,
    /// Worker threads. Training runs on one thread regardless.
    #[serde(default = "one")]
    pub threads: usize,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub tokenizer: TokenizerSection,
    #[serde(default)]
    pub dataprep: DataprepSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub schedule: Option<PretrainSchedule>,
    #[serde(default)]
    pub pretrain: PretrainSection,
    #[serde(default)]
    pub task: Option<TaskSection>,
    #[serde(default)]
    pub finetune: FinetuneSection,
}

fn yes() -> bool {
    true
}

fn one() -> usize {
    1
}

/// Input locations. Relative paths are taken from the config file's
/// directory; unset upstream artifacts default to the output directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub out: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub shards: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenizerSection {
    pub subword_count: usize,
    pub placeholder_count: usize,
    pub normalization: NormalizationConfig,
}

impl Default for TokenizerSection {
    fn default() -> Self {
        Self {
            subword_count: 31_000,
            placeholder_count: 1_000,
            normalization: NormalizationConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataprepSection {
    pub mask_rate: f64,
    pub replace_with_mask: f64,
    pub replace_with_random: f64,
    pub keep_original: f64,
    pub whole_word: bool,
    pub duplicates: usize,
    pub shard_size: usize,
}

impl Default for DataprepSection {
    fn default() -> Self {
        let m = MaskingConfig::default();
        Self {
            mask_rate: m.mask_rate,
            replace_with_mask: m.replace_with_mask,
            replace_with_random: m.replace_with_random,
            keep_original: m.keep_original,
            whole_word: m.whole_word,
            duplicates: m.duplicates,
            shard_size: 10_000,
        }
    }
}

impl DataprepSection {
    pub fn masking(&self, seed: u64) -> MaskingConfig {
        MaskingConfig {
            mask_rate: self.mask_rate,
            replace_with_mask: self.replace_with_mask,
            replace_with_random: self.replace_with_random,
            keep_original: self.keep_original,
            whole_word: self.whole_word,
            duplicates: self.duplicates,
            seed,
        }
    }
}

/// Encoder shape. `preset` ("tiny" or "base") supplies the defaults; the
/// vocabulary size always comes from the vocabulary file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub preset: Option<String>,
    pub num_layers: Option<usize>,
    pub num_heads: Option<usize>,
    pub hidden_size: Option<usize>,
    pub intermediate_size: Option<usize>,
    pub max_positions: Option<usize>,
    pub dropout: Option<f64>,
}

impl ModelSection {
    pub fn encoder(&self, vocab_size: usize, seed: u64) -> Result<EncoderConfig> {
        let mut c = match self.preset.as_deref().unwrap_or("tiny") {
            "tiny" => EncoderConfig::tiny(),
            "base" => EncoderConfig::base(),
            other => bail!("model.preset {other:?} is not one of \"tiny\", \"base\""),
        };
        if let Some(v) = self.num_layers {
            c.num_layers = v;
        }
        if let Some(v) = self.num_heads {
            c.num_heads = v;
        }
        if let Some(v) = self.hidden_size {
            c.hidden_size = v;
            c.intermediate_size = 4 * v;
        }
        if let Some(v) = self.intermediate_size {
            c.intermediate_size = v;
        }
        if let Some(v) = self.max_positions {
            c.max_positions = v;
        }
        if let Some(v) = self.dropout {
            c.dropout = v;
        }
        c.vocab_size = vocab_size;
        c.seed = seed;
        c.validate().context("model section")?;
        Ok(c)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainSection {
    pub checkpoint_every: u64,
    pub micro_batch: usize,
    pub stop_after: Option<u64>,
    pub resume: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    /// Tab-separated classification rows.
    Tsv,
    /// CoNLL-2002 style word/tag columns.
    Conll2002,
    /// CoNLL-U, reading the UPOS column as tags.
    ConlluPos,
    /// CoNLL-U, reading heads and relations.
    ConlluDep,
    /// SQuAD-style JSON.
    Squad,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    pub name: String,
    pub kind: TaskKind,
    pub format: DataFormat,
    /// Label inventory; empty means the training set's labels (or the TSV
    /// schema preset's).
    #[serde(default)]
    pub labels: Vec<String>,
    #[serde(default)]
    pub pair: bool,
    /// TSV layout preset: "xnli", "pawsx" or "mldoc". Unset means the
    /// canonical `text_a, [text_b,] label` layout with a header.
    #[serde(default)]
    pub schema: Option<String>,
    pub train: PathBuf,
    pub dev: PathBuf,
    /// Data scored by `predict`; defaults to `dev`.
    #[serde(default)]
    pub eval: Option<PathBuf>,
    /// Repair misaligned QA answer offsets when loading.
    #[serde(default = "yes")]
    pub repair_offsets: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneSection {
    pub grid: FinetuneGrid,
    pub window: WindowingConfig,
    pub qa: QaConfig,
    pub eval_batch: usize,
    pub max_answer_len: usize,
    pub exclude_punct: bool,
    pub metric: Option<MetricKind>,
    pub qa_normalization: QaNormalization,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        Self {
            grid: FinetuneGrid::default(),
            window: WindowingConfig::default(),
            qa: QaConfig::default(),
            eval_batch: 32,
            max_answer_len: 30,
            exclude_punct: false,
            metric: None,
            qa_normalization: QaNormalization::default(),
        }
    }
}

/// Finds the config file: the path as given, else under the directory
/// named by `MLMKIT_CONFIG_DIR`.
pub fn locate(path: Option<&Path>) -> Result<PathBuf> {
    let env_dir = std::env::var_os(CONFIG_DIR_ENV).map(PathBuf::from);
    let name = path.unwrap_or(Path::new(DEFAULT_CONFIG));
    if name.is_file() {
        return Ok(name.to_path_buf());
    }
    if name.is_relative() {
        if let Some(dir) = &env_dir {
            let p = dir.join(name);
            if p.is_file() {
                return Ok(p);
            }
        }
    }
    match env_dir {
        Some(dir) if name.is_relative() => bail!(
            "config file {} not found (also looked in {} from {CONFIG_DIR_ENV})",
            name.display(),
            dir.display()
        ),
        _ => bail!("config file {} not found", name.display()),
    }
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).with_context(|| format!("{}", path.display()))?;
        if cfg.threads == 0 {
            bail!("{}: threads must be at least 1", path.display());
        }
        Ok(cfg)
    }

    /// Loads a config file and makes every path absolute.
    pub fn load(path: &Path, out_override: Option<&Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("{}", path.display()))?;
        let mut cfg = Self::parse(&text, path)?;
        let base = path
            .canonicalize()
            .with_context(|| format!("{}", path.display()))?
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        let cwd = std::env::current_dir().context("current directory")?;
        cfg.paths.out = Some(match out_override {
            Some(o) => cwd.join(o),
            None => base.join(cfg.paths.out.as_deref().unwrap_or(Path::new("out"))),
        });
        let p = &mut cfg.paths;
        for slot in [
            &mut p.corpus,
            &mut p.vocab,
            &mut p.shards,
            &mut p.checkpoint,
            &mut p.model,
            &mut p.predictions,
            &mut cfg.pretrain.resume,
        ] {
            if let Some(v) = slot.as_mut() {
                *v = base.join(&*v);
            }
        }
        if let Some(t) = cfg.task.as_mut() {
            t.train = base.join(&t.train);
            t.dev = base.join(&t.dev);
            if let Some(e) = t.eval.as_mut() {
                *e = base.join(&*e);
            }
        }
        Ok(cfg)
    }

    pub fn out(&self) -> &Path {
        self.paths
            .out
            .as_deref()
            .expect("resolved config has an output directory")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hash of everything that affects results. Locations are left out so
    /// artifacts do not depend on where a run was started.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.paths = Paths::default();
        c.pretrain.resume = None;
        if let Some(t) = c.task.as_mut() {
            for p in [&mut t.train, &mut t.dev] {
                *p = p.file_name().map(PathBuf::from).unwrap_or_default();
            }
            t.eval = None;
        }
        sha256_hex(c.to_toml().as_bytes())
    }

    pub fn corpus(&self) -> Result<&Path> {
        self.paths
            .corpus
            .as_deref()
            .context("paths.corpus is not set in the config")
    }

    pub fn vocab_path(&self) -> PathBuf {
        self.paths
            .vocab
            .clone()
            .unwrap_or_else(|| self.out().join("vocab").join("vocab.txt"))
    }

    pub fn shards_dir(&self) -> PathBuf {
        self.paths.shards.clone().unwrap_or_else(|| self.out().join("shards"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.paths
            .checkpoint
            .clone()
            .unwrap_or_else(|| self.out().join("pretrain").join("model.ckpt"))
    }

    pub fn model_path(&self) -> PathBuf {
        self.paths
            .model
            .clone()
            .unwrap_or_else(|| self.out().join("finetune").join("model.ckpt"))
    }

    pub fn predictions_path(&self) -> PathBuf {
        self.paths
            .predictions
            .clone()
            .unwrap_or_else(|| self.out().join("predict").join("predictions.jsonl"))
    }

    pub fn schedule(&self) -> Result<&PretrainSchedule> {
        let s = self.schedule.as_ref().context("the config has no [schedule] section")?;
        s.validate().context("schedule section")?;
        Ok(s)
    }

    pub fn task(&self) -> Result<&TaskSection> {
        self.task.as_ref().context("the config has no [task] section")
    }
}
