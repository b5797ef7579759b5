use tensorcore::{Float, Mode, ParamStore, Tape, Tensor, Var};

use super::features::{encode_pair, ClsFeature, QaChunk, QaFeature, SeqFeature};
use super::mst::decode_mst;
use super::span::{select_span, ChunkLogits};
use super::window::WindowingConfig;
use super::{HeadsError, TaskKind, TaskSpec};
use crate::encoder::{encode_hidden, linear, Bound, DropoutKeys, EncoderConfig, EncoderInput};
use crate::tokenizer::{TokenizedText, Vocabulary, PAD};

/// Pads rows to a common length.
fn stack(rows: &[(&[u32], Option<&[u32]>)]) -> Result<EncoderInput, HeadsError> {
    let len = rows.iter().map(|(ids, _)| ids.len()).max().unwrap_or(0);
    let n = rows.len() * len;
    let (mut ids, mut mask, mut segs) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for (row, seg) in rows {
        ids.extend_from_slice(row);
        ids.resize(ids.len() + len - row.len(), PAD);
        mask.extend(std::iter::repeat(true).take(row.len()));
        mask.resize(mask.len() + len - row.len(), false);
        match seg {
            Some(s) => segs.extend_from_slice(s),
            None => segs.extend(std::iter::repeat(0).take(row.len())),
        }
        segs.resize(segs.len() + len - row.len(), 0);
    }
    Ok(EncoderInput::new(rows.len(), len, ids, mask, segs)?)
}

fn cls_logits<T: Float>(
    tape: &mut Tape<T>,
    model: &Bound<T>,
    cfg: &EncoderConfig,
    feats: &[&ClsFeature],
    keys: &mut DropoutKeys,
) -> Result<Var, HeadsError> {
    let rows: Vec<_> = feats.iter().map(|f| (&f.ids[..], Some(&f.segments[..]))).collect();
    let input = stack(&rows)?;
    let hidden = encode_hidden(tape, model, cfg, &input, keys)?;
    let cls: Vec<usize> = (0..input.batch).map(|b| b * input.len).collect();
    let x = tape.gather_rows(hidden, &cls)?;
    let x = linear(tape, x, model.var("head.pooler.w")?, model.var("head.pooler.b")?)?;
    let x = tape.tanh(x)?;
    let x = tape.dropout(x, cfg.dropout, keys.next())?;
    Ok(linear(tape, x, model.var("head.cls.w")?, model.var("head.cls.b")?)?)
}

/// Encodes every window of every sentence in one batch. Returns hidden
/// states and, per sentence, the flattened row of its CLS (first window)
/// followed by the rows of its words' first subwords.
fn encode_seqs<T: Float>(
    tape: &mut Tape<T>,
    model: &Bound<T>,
    cfg: &EncoderConfig,
    feats: &[&SeqFeature],
    keys: &mut DropoutKeys,
) -> Result<(Var, Vec<Vec<usize>>), HeadsError> {
    let rows: Vec<Vec<u32>> = feats.iter().flat_map(|f| f.rows()).collect();
    let refs: Vec<_> = rows.iter().map(|r| (&r[..], None)).collect();
    let input = stack(&refs)?;
    let hidden = encode_hidden(tape, model, cfg, &input, keys)?;
    let mut base = 0;
    let mut out = Vec::with_capacity(feats.len());
    for f in feats {
        let mut idx = vec![base * input.len];
        idx.extend(f.slots.iter().map(|s| (base + s.window) * input.len + s.pos));
        out.push(idx);
        base += f.windows.len();
    }
    Ok((hidden, out))
}

fn tag_logits<T: Float>(
    tape: &mut Tape<T>,
    model: &Bound<T>,
    cfg: &EncoderConfig,
    feats: &[&SeqFeature],
    keys: &mut DropoutKeys,
) -> Result<Var, HeadsError> {
    let (hidden, rows) = encode_seqs(tape, model, cfg, feats, keys)?;
    let words: Vec<usize> = rows.iter().flat_map(|r| r[1..].iter().copied()).collect();
    let x = tape.gather_rows(hidden, &words)?;
    let x = tape.dropout(x, cfg.dropout, keys.next())?;
    Ok(linear(tape, x, model.var("head.tag.w")?, model.var("head.tag.b")?)?)
}

/// Per-sentence parser outputs on the tape.
struct ParseVars {
    /// `[n, n + 1]`: row = dependent, column = head (0 = root).
    arcs: Var,
    /// `[n, C]` dependent part of the label scores, bias included.
    label_dep: Var,
    /// `[n + 1, C]` head part of the label scores.
    label_head: Var,
}

fn parse_vars<T: Float>(
    tape: &mut Tape<T>,
    model: &Bound<T>,
    cfg: &EncoderConfig,
    hidden: Var,
    rows: &[usize],
    keys: &mut DropoutKeys,
) -> Result<ParseVars, HeadsError> {
    let p = |name: &str| model.var(name);
    let n = rows.len() - 1;
    let x = tape.gather_rows(hidden, rows)?;
    let x = tape.dropout(x, cfg.dropout, keys.next())?;
    let words: Vec<usize> = (1..=n).collect();
    let xw = tape.gather_rows(x, &words)?;
    let heads = linear(tape, x, p("head.arc.head.w")?, p("head.arc.head.b")?)?;
    let heads = tape.tanh(heads)?;
    let deps = linear(tape, xw, p("head.arc.dep.w")?, p("head.arc.dep.b")?)?;
    let deps = tape.tanh(deps)?;
    let du = tape.matmul(deps, p("head.arc.u")?, false, false)?;
    let arcs = tape.matmul(du, heads, false, true)?;
    let hb = tape.matmul(heads, p("head.arc.head_bias")?, false, false)?;
    let hb = tape.reshape(hb, &[n + 1])?;
    let arcs = tape.add(arcs, hb)?;
    let mut mask = vec![T::zero(); n * (n + 1)];
    for d in 0..n {
        mask[d * (n + 1) + d + 1] = T::neg_infinity();
    }
    let mask = tape.constant(Tensor::new(vec![n, n + 1], mask)?);
    let arcs = tape.add(arcs, mask)?;
    let ld = tape.matmul(xw, p("head.label.dep.w")?, false, false)?;
    let label_dep = tape.add(ld, p("head.label.b")?)?;
    let label_head = tape.matmul(x, p("head.label.head.w")?, false, false)?;
    Ok(ParseVars {
        arcs,
        label_dep,
        label_head,
    })
}

/// Start and end logits `[2 * chunks, len]` (start row, then end row, per
/// chunk) with padding positions at negative infinity.
fn qa_logits<T: Float>(
    tape: &mut Tape<T>,
    model: &Bound<T>,
    cfg: &EncoderConfig,
    chunks: &[&QaChunk],
    keys: &mut DropoutKeys,
) -> Result<(Var, usize), HeadsError> {
    let rows: Vec<_> = chunks.iter().map(|c| (&c.ids[..], Some(&c.segments[..]))).collect();
    let input = stack(&rows)?;
    let (b, l) = (input.batch, input.len);
    let hidden = encode_hidden(tape, model, cfg, &input, keys)?;
    let x = tape.dropout(hidden, cfg.dropout, keys.next())?;
    let lg = linear(tape, x, model.var("head.span.w")?, model.var("head.span.b")?)?;
    let lg = tape.reshape(lg, &[b, l, 2])?;
    let lg = tape.permute(lg, &[0, 2, 1])?;
    let lg = tape.reshape(lg, &[2 * b, l])?;
    let mut mask = Vec::with_capacity(2 * b * l);
    for row in 0..b {
        for _ in 0..2 {
            mask.extend(input.attention_mask[row * l..(row + 1) * l].iter().map(|&m| {
                if m {
                    T::zero()
                } else {
                    T::neg_infinity()
                }
            }));
        }
    }
    let mask = tape.constant(Tensor::new(vec![2 * b, l], mask)?);
    Ok((tape.add(lg, mask)?, l))
}

/// One supervised fine-tuning instance.
#[derive(Clone, Debug, PartialEq)]
pub enum TrainExample {
    Classification {
        feature: ClsFeature,
        label: usize,
    },
    Tagging {
        feature: SeqFeature,
        tags: Vec<usize>,
    },
    Parsing {
        feature: SeqFeature,
        heads: Vec<usize>,
        labels: Vec<usize>,
    },
    /// One window of a QA example with answer row positions.
    Qa {
        chunk: QaChunk,
        start: usize,
        end: usize,
    },
}

impl TrainExample {
    pub fn kind(&self) -> TaskKind {
        match self {
            Self::Classification { .. } => TaskKind::Classification,
            Self::Tagging { .. } => TaskKind::Tagging,
            Self::Parsing { .. } => TaskKind::Parsing,
            Self::Qa { .. } => TaskKind::Qa,
        }
    }
}

/// Mean loss over the batch: per example for classification and QA, per
/// word for tagging and parsing (arc plus label loss).
pub fn task_loss<T: Float>(
    tape: &mut Tape<T>,
    model: &Bound<T>,
    cfg: &EncoderConfig,
    task: &TaskSpec,
    batch: &[&TrainExample],
    keys: &mut DropoutKeys,
) -> Result<Var, HeadsError> {
    if batch.is_empty() {
        return Err(HeadsError::InvalidInput("empty batch".into()));
    }
    if let Some(e) = batch.iter().find(|e| e.kind() != task.kind) {
        return Err(HeadsError::TaskMismatch {
            task: task.name.clone(),
            expected: task.kind,
            found: e.kind(),
        });
    }
    match task.kind {
        TaskKind::Classification => {
            let mut feats = Vec::new();
            let mut targets = Vec::new();
            for e in batch {
                if let TrainExample::Classification { feature, label } = e {
                    feats.push(feature);
                    targets.push(Some(*label));
                }
            }
            let logits = cls_logits(tape, model, cfg, &feats, keys)?;
            Ok(tape.cross_entropy(logits, &targets)?)
        }
        TaskKind::Tagging => {
            let mut feats = Vec::new();
            let mut targets = Vec::new();
            for e in batch {
                if let TrainExample::Tagging { feature, tags } = e {
                    check_len(feature, tags.len())?;
                    feats.push(feature);
                    targets.extend(tags.iter().map(|&t| Some(t)));
                }
            }
            let logits = tag_logits(tape, model, cfg, &feats, keys)?;
            Ok(tape.cross_entropy(logits, &targets)?)
        }
        TaskKind::Parsing => {
            let mut feats = Vec::new();
            for e in batch {
                if let TrainExample::Parsing { feature, heads, labels } = e {
                    check_len(feature, heads.len())?;
                    check_len(feature, labels.len())?;
                    feats.push(feature);
                }
            }
            let total: usize = feats.iter().map(|f| f.word_count()).sum();
            let (hidden, rows) = encode_seqs(tape, model, cfg, &feats, keys)?;
            let mut loss: Option<Var> = None;
            for (e, rows) in batch.iter().zip(&rows) {
                let TrainExample::Parsing { heads, labels, .. } = e else {
                    unreachable!()
                };
                let v = parse_vars(tape, model, cfg, hidden, rows, keys)?;
                let arc_t: Vec<_> = heads.iter().map(|&h| Some(h)).collect();
                let arc = tape.cross_entropy(v.arcs, &arc_t)?;
                let lh = tape.gather_rows(v.label_head, heads)?;
                let lab = tape.add(v.label_dep, lh)?;
                let lab_t: Vec<_> = labels.iter().map(|&l| Some(l)).collect();
                let lab = tape.cross_entropy(lab, &lab_t)?;
                let s = tape.add(arc, lab)?;
                let s = tape.scale(s, T::from_f64(heads.len() as f64 / total as f64))?;
                loss = Some(match loss {
                    Some(l) => tape.add(l, s)?,
                    None => s,
                });
            }
            Ok(loss.expect("non-empty batch"))
        }
        TaskKind::Qa => {
            let mut chunks = Vec::new();
            let mut targets = Vec::new();
            for e in batch {
                if let TrainExample::Qa { chunk, start, end } = e {
                    chunks.push(chunk);
                    targets.push(Some(*start));
                    targets.push(Some(*end));
                }
            }
            let (logits, _) = qa_logits(tape, model, cfg, &chunks, keys)?;
            Ok(tape.cross_entropy(logits, &targets)?)
        }
    }
}

fn check_len(f: &SeqFeature, n: usize) -> Result<(), HeadsError> {
    if f.word_count() != n {
        return Err(HeadsError::InvalidInput(format!(
            "{} words but {n} gold annotations",
            f.word_count()
        )));
    }
    Ok(())
}

fn eval_tape<T: Float>(params: &ParamStore<T>) -> (Tape<T>, Bound<'_, T>) {
    let mut tape = Tape::new(Mode::Eval);
    let model = Bound::new(&mut tape, params);
    (tape, model)
}

fn rows_f64<T: Float>(t: &Tensor<T>) -> Vec<Vec<f64>> {
    (0..t.rows())
        .map(|r| t.row(r).iter().map(|&v| Float::to_f64(v)).collect())
        .collect()
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Class distributions for a batch of encoded inputs.
pub fn classify_batch<T: Float>(
    params: &ParamStore<T>,
    cfg: &EncoderConfig,
    task: &TaskSpec,
    feats: &[&ClsFeature],
) -> Result<Vec<Vec<f64>>, HeadsError> {
    task.expect(TaskKind::Classification)?;
    if feats.is_empty() {
        return Ok(Vec::new());
    }
    let (mut tape, model) = eval_tape(params);
    let logits = cls_logits(&mut tape, &model, cfg, feats, &mut DropoutKeys::new(0))?;
    let probs = tape.softmax(logits)?;
    Ok(rows_f64(tape.value(probs)))
}

/// Class distribution for a text or text pair (pair texts use segment 1).
#[allow(clippy::too_many_arguments)]
pub fn classify_sequence<T: Float>(
    params: &ParamStore<T>,
    cfg: &EncoderConfig,
    task: &TaskSpec,
    vocab: &Vocabulary,
    a: &str,
    b: Option<&str>,
    max_len: usize,
) -> Result<Vec<f64>, HeadsError> {
    let f = encode_pair(vocab, a, b, max_len)?;
    Ok(classify_batch(params, cfg, task, &[&f])?.remove(0))
}

/// One tag index per word for each sentence.
pub fn tag_batch<T: Float>(
    params: &ParamStore<T>,
    cfg: &EncoderConfig,
    task: &TaskSpec,
    feats: &[&SeqFeature],
) -> Result<Vec<Vec<usize>>, HeadsError> {
    task.expect(TaskKind::Tagging)?;
    if feats.is_empty() {
        return Ok(Vec::new());
    }
    let (mut tape, model) = eval_tape(params);
    let logits = tag_logits(&mut tape, &model, cfg, feats, &mut DropoutKeys::new(0))?;
    let tags: Vec<usize> = rows_f64(tape.value(logits)).iter().map(|r| argmax(r)).collect();
    let mut out = Vec::with_capacity(feats.len());
    let mut at = 0;
    for f in feats {
        out.push(tags[at..at + f.word_count()].to_vec());
        at += f.word_count();
    }
    Ok(out)
}

/// Tags a sentence of any length through sliding windows; each word gets
/// the tag predicted for its first subword.
pub fn tag_tokens_windowed<T: Float>(
    params: &ParamStore<T>,
    cfg: &EncoderConfig,
    task: &TaskSpec,
    sentence: &TokenizedText,
    wcfg: &WindowingConfig,
) -> Result<Vec<usize>, HeadsError> {
    if sentence.is_empty() {
        return Ok(Vec::new());
    }
    let f = SeqFeature::new(sentence.clone(), wcfg)?;
    Ok(tag_batch(params, cfg, task, &[&f])?.remove(0))
}

/// Parser scores for one sentence of `n` words.
#[derive(Clone, Debug, PartialEq)]
pub struct ParseScores {
    /// `[n + 1][n]`: `arcs[h][d - 1]` scores head `h` (0 = root) for word `d`.
    pub arcs: Vec<Vec<f64>>,
    /// `[n][C]` label scores from the dependent, bias included.
    pub label_dep: Vec<Vec<f64>>,
    /// `[n + 1][C]` label scores from the head.
    pub label_head: Vec<Vec<f64>>,
}

impl ParseScores {
    /// Label scores of word `d` (1-based) attached to head `h`.
    pub fn label_scores(&self, d: usize, h: usize) -> Vec<f64> {
        self.label_dep[d - 1]
            .iter()
            .zip(&self.label_head[h])
            .map(|(a, b)| a + b)
            .collect()
    }
}

fn scores_for_batch<T: Float>(
    params: &ParamStore<T>,
    cfg: &EncoderConfig,
    feats: &[&SeqFeature],
) -> Result<Vec<ParseScores>, HeadsError> {
    let (mut tape, model) = eval_tape(params);
    let mut keys = DropoutKeys::new(0);
    let (hidden, rows) = encode_seqs(&mut tape, &model, cfg, feats, &mut keys)?;
    let mut out = Vec::with_capacity(feats.len());
    for rows in &rows {
        let v = parse_vars(&mut tape, &model, cfg, hidden, rows, &mut keys)?;
        let dep_major = rows_f64(tape.value(v.arcs));
        let n = dep_major.len();
        let arcs = (0..=n).map(|h| (0..n).map(|d| dep_major[d][h]).collect()).collect();
        out.push(ParseScores {
            arcs,
            label_dep: rows_f64(tape.value(v.label_dep)),
            label_head: rows_f64(tape.value(v.label_head)),
        });
    }
    Ok(out)
}

/// Arc and label scores for one sentence.
pub fn score_arcs_and_labels<T: Float>(
    params: &ParamStore<T>,
    cfg: &EncoderConfig,
    task: &TaskSpec,
    sentence: &SeqFeature,
) -> Result<ParseScores, HeadsError> {
    task.expect(TaskKind::Parsing)?;
    Ok(scores_for_batch(params, cfg, &[sentence])?.remove(0))
}

/// Single-root maximum spanning tree, then the best label for each arc.
pub fn decode_parse(scores: &ParseScores) -> (Vec<usize>, Vec<usize>) {
    let heads = decode_mst(&scores.arcs, true);
    let labels = heads
        .iter()
        .enumerate()
        .map(|(i, &h)| argmax(&scores.label_scores(i + 1, h)))
        .collect();
    (heads, labels)
}

/// Decoded `(heads, labels)` for each sentence.
pub fn parse_batch<T: Float>(
    params: &ParamStore<T>,
    cfg: &EncoderConfig,
    task: &TaskSpec,
    feats: &[&SeqFeature],
) -> Result<Vec<(Vec<usize>, Vec<usize>)>, HeadsError> {
    task.expect(TaskKind::Parsing)?;
    if feats.is_empty() {
        return Ok(Vec::new());
    }
    Ok(scores_for_batch(params, cfg, feats)?.iter().map(decode_parse).collect())
}

/// A predicted answer span.
#[derive(Clone, Debug, PartialEq)]
pub struct QaPrediction {
    /// Context token indices (inclusive).
    pub start_token: usize,
    pub end_token: usize,
    pub score: f64,
    /// Character range in the context.
    pub char_start: usize,
    pub char_end: usize,
    pub text: String,
}

/// Best answer span for each example; windows of one example are merged by
/// score.
pub fn predict_spans<T: Float>(
    params: &ParamStore<T>,
    cfg: &EncoderConfig,
    task: &TaskSpec,
    feats: &[&QaFeature],
    max_answer_len: usize,
) -> Result<Vec<Option<QaPrediction>>, HeadsError> {
    task.expect(TaskKind::Qa)?;
    let chunks: Vec<&QaChunk> = feats.iter().flat_map(|f| f.chunks.iter()).collect();
    if chunks.is_empty() {
        return Ok(vec![None; feats.len()]);
    }
    let (mut tape, model) = eval_tape(params);
    let (logits, _) = qa_logits(&mut tape, &model, cfg, &chunks, &mut DropoutKeys::new(0))?;
    let rows = rows_f64(tape.value(logits));
    let mut out = Vec::with_capacity(feats.len());
    let mut at = 0;
    for f in feats {
        let cl: Vec<ChunkLogits> = f
            .chunks
            .iter()
            .enumerate()
            .map(|(i, c)| ChunkLogits {
                start: rows[2 * (at + i)].clone(),
                end: rows[2 * (at + i) + 1].clone(),
                context: c.context.clone(),
                offset: c.offset,
            })
            .collect();
        at += f.chunks.len();
        out.push(select_span(&cl, max_answer_len).map(|s| {
            let (ws, we) = (f.token_word[s.start], f.token_word[s.end]);
            let (cs, ce) = (f.words[ws].1.start, f.words[we].1.end);
            QaPrediction {
                start_token: s.start,
                end_token: s.end,
                score: s.score,
                char_start: cs,
                char_end: ce,
                text: f.context.chars().skip(cs).take(ce - cs).collect(),
            }
        }));
    }
    Ok(out)
}

/// Best answer span for one question and context.
#[allow(clippy::too_many_arguments)]
pub fn predict_span<T: Float>(
    params: &ParamStore<T>,
    cfg: &EncoderConfig,
    task: &TaskSpec,
    vocab: &Vocabulary,
    question: &str,
    context: &str,
    qcfg: &super::QaConfig,
) -> Result<QaPrediction, HeadsError> {
    let f = QaFeature::new(vocab, question, context, qcfg)?;
    predict_spans(params, cfg, task, &[&f], qcfg.max_answer_len)?
        .remove(0)
        .ok_or_else(|| HeadsError::InvalidInput("no valid span in context".into()))
}
