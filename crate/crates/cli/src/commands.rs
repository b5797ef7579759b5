use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use mlmkit::dataprep::{
    build_examples, dataprep_config_hash, read_manifest, read_pretrain_shards, write_pretrain_shards, Manifest,
    MANIFEST_FILE,
};
use mlmkit::encoder::{load_checkpoint, save_checkpoint, Checkpoint};
use mlmkit::gluesio::{
    read_conll2002, read_conllu, read_squad_json, read_tsv_pairs, validate_and_repair_offsets, TsvSchema,
};
use mlmkit::heads::{TaskKind, TaskSpec};
use mlmkit::metrics::{evaluate_records, MetricKind, MetricReport, PredictionRecord};
use mlmkit::tokenizer::{train_vocabulary, Vocabulary};
use mlmkit::trainer::{
    build_eval_items, build_train_examples, default_metric, grid_search, predict_records, pretrain, FinetuneOptions,
    HyperParams, InputConfig, PretrainOptions, TaskRecords,
};
use mlmkit::util::sha256_hex;
use serde::{Deserialize, Serialize};

use crate::config::{DataFormat, RunConfig, TaskSection};
use crate::Internal;

pub const SNAPSHOT_FILE: &str = "resolved-config.toml";
pub const PROVENANCE_FILE: &str = "provenance.toml";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const REPORT_FILE: &str = "report.toml";

/// Where an artifact came from: the config that produced it and the
/// hashes of its inputs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub command: String,
    pub config_hash: String,
    pub vocab_hash: String,
    #[serde(default)]
    pub inputs: BTreeMap<String, String>,
}

/// Metadata stored in fine-tuned checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneMeta {
    pub kind: String,
    pub task: TaskSpec,
    pub metric: MetricKind,
    pub hp: HyperParams,
    pub best_epoch: usize,
    pub dev_score: f64,
    pub input: InputConfig,
    pub provenance: Provenance,
}

/// First line of a prediction dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DumpHeader {
    pub kind: String,
    pub task: String,
    pub metric: MetricKind,
    pub provenance: Provenance,
}

/// A command's output directory, built under a temporary name and moved
/// into place only when the command succeeds.
struct Stage {
    dir: PathBuf,
    tmp: PathBuf,
}

impl Stage {
    fn new(out: &Path, name: &str) -> Result<Self> {
        std::fs::create_dir_all(out).with_context(|| format!("{}", out.display()))?;
        let tmp = out.join(format!(".{name}.staging"));
        if tmp.exists() {
            std::fs::remove_dir_all(&tmp).with_context(|| format!("{}", tmp.display()))?;
        }
        std::fs::create_dir_all(&tmp).with_context(|| format!("{}", tmp.display()))?;
        Ok(Self {
            dir: out.join(name),
            tmp,
        })
    }

    fn path(&self, file: &str) -> PathBuf {
        self.tmp.join(file)
    }

    fn write(&self, file: &str, bytes: &[u8]) -> Result<()> {
        let p = self.path(file);
        std::fs::write(&p, bytes).with_context(|| format!("{}", p.display()))
    }

    fn commit(self, cfg: &RunConfig, prov: &Provenance) -> Result<PathBuf> {
        let snapshot = format!("# config_hash = \"{}\"\n{}", prov.config_hash, cfg.to_toml());
        self.write(SNAPSHOT_FILE, snapshot.as_bytes())?;
        self.write(PROVENANCE_FILE, toml::to_string(prov)?.as_bytes())?;
        let old = self.tmp.with_extension("old");
        if self.dir.exists() {
            if old.exists() {
                std::fs::remove_dir_all(&old)?;
            }
            std::fs::rename(&self.dir, &old).with_context(|| format!("{}", self.dir.display()))?;
        }
        std::fs::rename(&self.tmp, &self.dir).with_context(|| format!("{}", self.dir.display()))?;
        if old.exists() {
            std::fs::remove_dir_all(&old)?;
        }
        Ok(self.dir)
    }
}

fn provenance(cfg: &RunConfig, command: &str, vocab_hash: &str) -> Provenance {
    Provenance {
        command: command.into(),
        config_hash: cfg.hash(),
        vocab_hash: vocab_hash.into(),
        inputs: BTreeMap::new(),
    }
}

fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("{}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

fn read_corpus(cfg: &RunConfig) -> Result<(PathBuf, String)> {
    let path = cfg.corpus()?.to_path_buf();
    let text = std::fs::read_to_string(&path).with_context(|| format!("corpus {}", path.display()))?;
    Ok((path, text))
}

fn load_vocab(cfg: &RunConfig) -> Result<Vocabulary> {
    let path = cfg.vocab_path();
    Vocabulary::load(&path).with_context(|| format!("vocabulary {} (run build-vocab first)", path.display()))
}

pub fn build_vocab(cfg: &RunConfig) -> Result<PathBuf> {
    let (path, text) = read_corpus(cfg)?;
    let t = &cfg.tokenizer;
    let vocab = train_vocabulary(
        text.lines().filter(|l| !l.trim().is_empty()),
        &t.normalization,
        t.subword_count,
        t.placeholder_count,
        cfg.seed,
    )
    .with_context(|| format!("training a vocabulary on {}", path.display()))?;
    let stage = Stage::new(cfg.out(), "vocab")?;
    let file = stage.path("vocab.txt");
    vocab.save(&file)?;
    let again = Vocabulary::load(&file)?;
    if again.hash() != vocab.hash() {
        return Err(Internal("vocabulary did not reload identically".into()).into());
    }
    let mut prov = provenance(cfg, "build-vocab", &vocab.hash());
    prov.inputs.insert("corpus".into(), sha256_hex(text.as_bytes()));
    let dir = stage.commit(cfg, &prov)?;
    println!("vocabulary: {} ids, hash {}", vocab.size(), vocab.hash());
    Ok(dir)
}

pub fn prepare(cfg: &RunConfig) -> Result<PathBuf> {
    let vocab = load_vocab(cfg)?;
    let sched = cfg.schedule()?;
    let masking = cfg.dataprep.masking(cfg.seed);
    masking.validate()?;
    ensure!(cfg.dataprep.shard_size > 0, "dataprep.shard_size must be positive");
    let (_, text) = read_corpus(cfg)?;
    let stage = Stage::new(cfg.out(), "shards")?;
    let mut prov = provenance(cfg, "prepare", &vocab.hash());
    prov.inputs.insert("corpus".into(), sha256_hex(text.as_bytes()));
    for (phase, max_len) in [(1, sched.phase1.max_len), (2, sched.phase2.max_len)] {
        let (examples, packed) = build_examples(&text, &vocab, max_len, &masking)?;
        if packed.skipped_sentences > 0 {
            log::warn!(
                "phase {phase}: skipped {} sentence(s) holding a word longer than {} tokens",
                packed.skipped_sentences,
                max_len - 2
            );
        }
        ensure!(
            !examples.is_empty(),
            "the corpus yields no examples at max_len {max_len}"
        );
        let m = write_pretrain_shards(
            &examples,
            &stage.path(&format!("phase{phase}")),
            cfg.dataprep.shard_size,
            max_len,
            &dataprep_config_hash(max_len, &masking),
            &vocab.hash(),
        )?;
        println!(
            "phase {phase}: {} sequences, {} examples in {} shard(s)",
            packed.sequences.len(),
            m.total,
            m.shards.len()
        );
    }
    stage.commit(cfg, &prov)
}

fn check_manifest(cfg: &RunConfig, phase: u8, max_len: usize, vocab_hash: &str) -> Result<(PathBuf, Manifest)> {
    let dir = cfg.shards_dir().join(format!("phase{phase}"));
    let path = dir.join(MANIFEST_FILE);
    let m = read_manifest(&path).with_context(|| format!("phase-{phase} shards (run prepare first)"))?;
    ensure!(
        m.vocab_hash == vocab_hash,
        "{}: vocabulary hash {} does not match {} of the configured vocabulary",
        path.display(),
        m.vocab_hash,
        vocab_hash
    );
    ensure!(
        m.max_len == max_len,
        "{}: shards have max_len {} but schedule.phase{phase}.max_len is {max_len}",
        path.display(),
        m.max_len
    );
    let expected = dataprep_config_hash(max_len, &cfg.dataprep.masking(cfg.seed));
    ensure!(
        m.config_hash == expected,
        "{}: shards were generated with a different dataprep configuration or seed",
        path.display()
    );
    Ok((dir, m))
}

pub fn pretrain_cmd(cfg: &RunConfig) -> Result<PathBuf> {
    let vocab = load_vocab(cfg)?;
    let vhash = vocab.hash();
    let sched = cfg.schedule()?;
    let enc = cfg.model.encoder(vocab.size(), cfg.seed)?;
    let longest = sched.phase1.max_len.max(sched.phase2.max_len);
    ensure!(
        enc.max_positions >= longest,
        "model max_positions {} is below the longest phase max_len {longest}",
        enc.max_positions
    );
    let (d1, m1) = check_manifest(cfg, 1, sched.phase1.max_len, &vhash)?;
    let (d2, m2) = check_manifest(cfg, 2, sched.phase2.max_len, &vhash)?;
    let resume = match &cfg.pretrain.resume {
        Some(p) => Some(
            load_checkpoint::<f32>(p, Some(&vhash)).with_context(|| format!("resume checkpoint {}", p.display()))?,
        ),
        None => None,
    };
    let (_, phase1) = read_pretrain_shards(&d1)?;
    let (_, phase2) = read_pretrain_shards(&d2)?;

    let stage = Stage::new(cfg.out(), "pretrain")?;
    let log_path = stage.path("log.jsonl");
    let mut log = BufWriter::new(File::create(&log_path).with_context(|| format!("{}", log_path.display()))?);
    let opts = PretrainOptions {
        seed: cfg.seed,
        micro_batch: cfg.pretrain.micro_batch,
        checkpoint_every: cfg.pretrain.checkpoint_every,
        stop_after: cfg.pretrain.stop_after,
    };
    let out = pretrain::<f32>(
        &enc,
        sched,
        &phase1,
        &phase2,
        &opts,
        &vhash,
        resume,
        Some(&stage.tmp),
        &mut log,
    )?;
    log.flush()?;
    let mut prov = provenance(cfg, "pretrain", &vhash);
    prov.inputs
        .insert("phase1_manifest".into(), sha256_hex(toml::to_string(&m1)?.as_bytes()));
    prov.inputs
        .insert("phase2_manifest".into(), sha256_hex(toml::to_string(&m2)?.as_bytes()));
    if let Some(p) = &cfg.pretrain.resume {
        prov.inputs.insert("resume".into(), file_hash(p)?);
    }
    let mut ck = out.checkpoint(&enc, sched, cfg.seed, &vhash);
    let mut meta: toml::Table = toml::from_str(&ck.meta)?;
    meta.insert("provenance".into(), toml::Value::try_from(&prov)?);
    ck.meta = toml::to_string(&meta)?;
    save_checkpoint(&ck, &stage.path("model.ckpt"))?;
    let dir = stage.commit(cfg, &prov)?;
    println!(
        "pretrained {} steps, last loss {:.4}",
        out.step,
        out.last_loss().unwrap_or(f64::NAN)
    );
    Ok(dir)
}

/// Reads one task file in the configured format.
pub fn load_records(t: &TaskSection, path: &Path, labels: &[String]) -> Result<TaskRecords> {
    let recs = match (t.format, t.kind) {
        (DataFormat::Tsv, TaskKind::Classification) => {
            let schema = match &t.schema {
                Some(name) => {
                    let mut s = TsvSchema::by_name(name)
                        .with_context(|| format!("task.schema {name:?} is not one of xnli, pawsx, mldoc"))?;
                    if !labels.is_empty() {
                        s.labels = labels.to_vec();
                    }
                    s
                }
                None => {
                    ensure!(
                        !labels.is_empty(),
                        "task.labels must be set for the canonical TSV layout"
                    );
                    TsvSchema::canonical(t.pair, labels)
                }
            };
            TaskRecords::Classification(read_tsv_pairs(path, &schema)?)
        }
        (DataFormat::Conll2002, TaskKind::Tagging) => {
            let (s, stats) = read_conll2002(path)?;
            if stats.bio_repairs > 0 {
                log::warn!("{}: repaired {} BIO tag(s)", path.display(), stats.bio_repairs);
            }
            TaskRecords::Tagging(s)
        }
        (DataFormat::ConlluPos, TaskKind::Tagging) => {
            TaskRecords::Tagging(read_conllu(path)?.iter().map(|s| s.to_pos()).collect())
        }
        (DataFormat::ConlluDep, TaskKind::Parsing) => {
            TaskRecords::Parsing(read_conllu(path)?.iter().map(|s| s.to_dep()).collect())
        }
        (DataFormat::Squad, TaskKind::Qa) => {
            let mut ex = read_squad_json(path)?;
            if t.repair_offsets {
                let (fixed, r) = validate_and_repair_offsets(&ex, false);
                if r.repaired + r.dropped > 0 {
                    log::warn!(
                        "{}: repaired {} and dropped {} answer offset(s)",
                        path.display(),
                        r.repaired,
                        r.dropped
                    );
                }
                ex = fixed;
            }
            TaskRecords::Qa(ex)
        }
        (f, k) => bail!("task.format {f:?} cannot feed a {k:?} task"),
    };
    ensure!(!recs.is_empty(), "{}: no examples", path.display());
    Ok(recs)
}

fn task_labels(t: &TaskSection, train: &TaskRecords) -> Vec<String> {
    if !t.labels.is_empty() {
        return t.labels.clone();
    }
    if let Some(s) = t.schema.as_deref().and_then(TsvSchema::by_name) {
        return s.labels;
    }
    train.label_set()
}

pub fn finetune_cmd(cfg: &RunConfig) -> Result<PathBuf> {
    let vocab = load_vocab(cfg)?;
    let vhash = vocab.hash();
    let ck_path = cfg.checkpoint_path();
    let ck: Checkpoint<f32> = load_checkpoint(&ck_path, Some(&vhash))
        .with_context(|| format!("pre-trained checkpoint {} (run pretrain first)", ck_path.display()))?;
    ensure!(
        ck.config.vocab_size == vocab.size(),
        "checkpoint vocab_size {} differs from the vocabulary's {}",
        ck.config.vocab_size,
        vocab.size()
    );
    let t = cfg.task()?;
    let f = &cfg.finetune;
    f.grid.validate()?;
    let input = InputConfig {
        max_len: f.grid.max_len,
        window: f.window,
        qa: f.qa,
    };
    check_input(t.kind, &input, ck.config.max_positions)?;
    let train_recs = load_records(t, &t.train, &t.labels)?;
    let labels = task_labels(t, &train_recs);
    let dev_recs = load_records(t, &t.dev, &labels)?;
    let task = TaskSpec {
        name: t.name.clone(),
        kind: t.kind,
        labels,
        pair: t.pair,
    };
    task.validate()?;
    let (train, skipped) = build_train_examples(&task, &vocab, &train_recs, &input)?;
    if skipped > 0 {
        log::warn!("skipped {skipped} QA example(s) whose answer no window holds");
    }
    ensure!(!train.is_empty(), "no training examples");
    let dev = build_eval_items(&task, &vocab, &dev_recs, &input)?;
    let metric = f.metric.unwrap_or_else(|| default_metric(&task));
    let opts = FinetuneOptions {
        seed: cfg.seed,
        warmup_fraction: f.grid.warmup_fraction,
        metric: Some(metric),
        eval_batch: f.eval_batch,
        exclude_punct: f.exclude_punct,
        max_answer_len: f.max_answer_len,
        qa_normalization: f.qa_normalization.clone(),
    };
    let grid = grid_search(&ck.params, &ck.config, &task, &train, &dev, &f.grid, &opts)?;
    let best = &grid.rows[grid.best];

    let mut prov = provenance(cfg, "finetune", &vhash);
    prov.inputs.insert("checkpoint".into(), file_hash(&ck_path)?);
    prov.inputs.insert("train".into(), file_hash(&t.train)?);
    prov.inputs.insert("dev".into(), file_hash(&t.dev)?);
    let meta = FinetuneMeta {
        kind: "finetune".into(),
        task: task.clone(),
        metric,
        hp: best.hp,
        best_epoch: best.best_epoch,
        dev_score: best.score,
        input,
        provenance: prov.clone(),
    };
    let stage = Stage::new(cfg.out(), "finetune")?;
    save_checkpoint(
        &Checkpoint {
            config: ck.config.clone(),
            vocab_hash: vhash.clone(),
            params: grid.best_params.clone(),
            adam: None,
            meta: toml::to_string(&meta)?,
        },
        &stage.path("model.ckpt"),
    )?;
    stage.write("grid.tsv", grid.table().as_bytes())?;
    stage.write(REPORT_FILE, grid.best_report.to_toml().as_bytes())?;
    let dir = stage.commit(cfg, &prov)?;
    println!(
        "best: batch {} lr {} epochs {} (epoch {}), dev {} = {:.4}",
        best.hp.batch,
        best.hp.lr,
        best.hp.epochs,
        best.best_epoch,
        metric.name(),
        best.score
    );
    Ok(dir)
}

fn check_input(kind: TaskKind, input: &InputConfig, max_positions: usize) -> Result<()> {
    let (what, len) = match kind {
        TaskKind::Classification => ("finetune.grid.max_len", input.max_len),
        TaskKind::Tagging | TaskKind::Parsing => {
            input.window.validate()?;
            ("finetune.window.window_len", input.window.window_len)
        }
        TaskKind::Qa => {
            input.qa.validate()?;
            ("finetune.qa.max_len", input.qa.max_len)
        }
    };
    ensure!(
        len <= max_positions,
        "{what} {len} exceeds the model's max_positions {max_positions}"
    );
    Ok(())
}

pub fn predict_cmd(cfg: &RunConfig) -> Result<PathBuf> {
    let vocab = load_vocab(cfg)?;
    let vhash = vocab.hash();
    let model_path = cfg.model_path();
    let ck: Checkpoint<f32> = load_checkpoint(&model_path, Some(&vhash))
        .with_context(|| format!("fine-tuned model {} (run finetune first)", model_path.display()))?;
    let meta: FinetuneMeta =
        toml::from_str(&ck.meta).with_context(|| format!("{}: not a fine-tuned checkpoint", model_path.display()))?;
    let t = cfg.task()?;
    ensure!(
        t.name == meta.task.name && t.kind == meta.task.kind,
        "{}: model was fine-tuned for task {} ({:?}), config names {} ({:?})",
        model_path.display(),
        meta.task.name,
        meta.task.kind,
        t.name,
        t.kind
    );
    let data = t.eval.as_ref().unwrap_or(&t.dev);
    let recs = load_records(t, data, &meta.task.labels)?;
    let items = build_eval_items(&meta.task, &vocab, &recs, &meta.input)?;
    let f = &cfg.finetune;
    let records = predict_records(
        &ck.params,
        &ck.config,
        &meta.task,
        &items,
        f.eval_batch,
        f.max_answer_len,
    )?;

    let mut prov = provenance(cfg, "predict", &vhash);
    prov.inputs.insert("model".into(), file_hash(&model_path)?);
    prov.inputs.insert("data".into(), file_hash(data)?);
    let header = DumpHeader {
        kind: "header".into(),
        task: meta.task.name.clone(),
        metric: meta.metric,
        provenance: prov.clone(),
    };
    let mut dump = serde_json::to_string(&header)? + "\n";
    for r in &records {
        dump += &serde_json::to_string(r)?;
        dump.push('\n');
    }
    let stage = Stage::new(cfg.out(), "predict")?;
    stage.write(PREDICTIONS_FILE, dump.as_bytes())?;
    let dir = stage.commit(cfg, &prov)?;
    println!("{} predictions for task {}", records.len(), meta.task.name);
    Ok(dir)
}

pub fn read_predictions(path: &Path) -> Result<(DumpHeader, Vec<PredictionRecord>)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("predictions {}", path.display()))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines
        .next()
        .with_context(|| format!("{}: empty prediction dump", path.display()))?;
    let header: DumpHeader =
        serde_json::from_str(first).with_context(|| format!("{}: line 1 is not a dump header", path.display()))?;
    ensure!(
        header.kind == "header",
        "{}: line 1 is not a dump header",
        path.display()
    );
    let records = lines
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}: line {}", path.display(), i + 1)))
        .collect::<Result<Vec<PredictionRecord>>>()?;
    Ok((header, records))
}

pub fn evaluate_cmd(cfg: &RunConfig) -> Result<PathBuf> {
    let vocab = load_vocab(cfg)?;
    let vhash = vocab.hash();
    let path = cfg.predictions_path();
    let (header, records) = read_predictions(&path)?;
    ensure!(
        header.provenance.vocab_hash == vhash,
        "{}: predictions were made under vocabulary {} but the configured vocabulary is {}",
        path.display(),
        header.provenance.vocab_hash,
        vhash
    );
    if let Some(t) = &cfg.task {
        ensure!(
            t.name == header.task,
            "{}: predictions are for task {} but the config names {}",
            path.display(),
            header.task,
            t.name
        );
    }
    let f = &cfg.finetune;
    let metric = f.metric.unwrap_or(header.metric);
    let mut report: MetricReport =
        evaluate_records(&header.task, metric, &records, f.exclude_punct, &f.qa_normalization)?;
    report.validate()?;
    let mut prov = provenance(cfg, "evaluate", &vhash);
    prov.inputs.insert("predictions".into(), file_hash(&path)?);
    report.flags.insert("config_hash".into(), prov.config_hash.clone());
    report
        .flags
        .insert("predictions_sha256".into(), prov.inputs["predictions"].clone());
    report.flags.insert("vocab_hash".into(), vhash);
    let stage = Stage::new(cfg.out(), "evaluate")?;
    stage.write(REPORT_FILE, report.to_toml().as_bytes())?;
    let dir = stage.commit(cfg, &prov)?;
    println!(
        "{} {} = {:.4} over {} examples",
        report.task,
        metric.name(),
        report.score,
        report.examples
    );
    Ok(dir)
}
