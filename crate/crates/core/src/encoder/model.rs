use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tensorcore::{Float, Mode, ParamStore, Tape, Tensor, Var, LAYER_NORM_EPS};

use super::{EncoderConfig, EncoderError};
use crate::dataprep::PretrainExample;

pub const INIT_STD: f64 = 0.02;
/// Standard deviation of a unit normal truncated to [-2, 2].
const TRUNCATED_UNIT_STD: f64 = 0.879_626_167_2;

fn truncated_normal(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Vec<f64> {
    let n: usize = shape.iter().product();
    let scale = std / TRUNCATED_UNIT_STD;
    (0..n)
        .map(|_| loop {
            let z: f64 = rng.sample(StandardNormal);
            if z.abs() <= 2.0 {
                break z * scale;
            }
        })
        .collect()
}

/// Names and shapes of every encoder and MLM-head tensor, in storage order.
/// The flag says whether weight decay applies.
pub fn param_layout(cfg: &EncoderConfig) -> Vec<(String, Vec<usize>, bool)> {
    let (h, i) = (cfg.hidden_size, cfg.intermediate_size);
    let mut out = vec![
        ("emb.word".to_string(), vec![cfg.vocab_size, h], true),
        ("emb.position".to_string(), vec![cfg.max_positions, h], true),
        ("emb.type".to_string(), vec![cfg.type_vocab, h], true),
        ("emb.ln.gamma".to_string(), vec![h], false),
        ("emb.ln.beta".to_string(), vec![h], false),
    ];
    for l in 0..cfg.num_layers {
        let p = format!("layer{l}");
        for m in ["q", "k", "v", "o"] {
            out.push((format!("{p}.attn.{m}.w"), vec![h, h], true));
            out.push((format!("{p}.attn.{m}.b"), vec![h], false));
        }
        out.push((format!("{p}.attn.ln.gamma"), vec![h], false));
        out.push((format!("{p}.attn.ln.beta"), vec![h], false));
        out.push((format!("{p}.ffn.in.w"), vec![h, i], true));
        out.push((format!("{p}.ffn.in.b"), vec![i], false));
        out.push((format!("{p}.ffn.out.w"), vec![i, h], true));
        out.push((format!("{p}.ffn.out.b"), vec![h], false));
        out.push((format!("{p}.ffn.ln.gamma"), vec![h], false));
        out.push((format!("{p}.ffn.ln.beta"), vec![h], false));
    }
    out.push(("mlm.transform.w".to_string(), vec![h, h], true));
    out.push(("mlm.transform.b".to_string(), vec![h], false));
    out.push(("mlm.ln.gamma".to_string(), vec![h], false));
    out.push(("mlm.ln.beta".to_string(), vec![h], false));
    out.push(("mlm.bias".to_string(), vec![cfg.vocab_size], false));
    out
}

/// Initial value for a tensor by naming convention: norm gains are ones,
/// biases zeros, everything else truncated normal.
pub fn init_tensor<T: Float>(rng: &mut ChaCha8Rng, name: &str, shape: &[usize]) -> Tensor<T> {
    if name.ends_with(".gamma") {
        Tensor::full(shape, T::one())
    } else if name.ends_with(".beta") || name.ends_with(".b") || name.ends_with("bias") {
        Tensor::zeros(shape)
    } else {
        let data = truncated_normal(rng, shape, INIT_STD);
        Tensor::from_f64(shape, &data).expect("shape matches data")
    }
}

/// Weights truncated normal with standard deviation 0.02 (cut at two
/// standard deviations), biases zero, norm gains one. Deterministic in
/// `cfg.seed`.
pub fn init_params<T: Float>(cfg: &EncoderConfig) -> Result<ParamStore<T>, EncoderError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    for (name, shape, decay) in param_layout(cfg) {
        let t = init_tensor(&mut rng, &name, &shape);
        store.push(name, t, decay);
    }
    Ok(store)
}

/// A batch of token sequences, row-major `[batch, len]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderInput {
    pub batch: usize,
    pub len: usize,
    pub ids: Vec<u32>,
    pub attention_mask: Vec<bool>,
    pub segments: Vec<u32>,
}

impl EncoderInput {
    pub fn new(
        batch: usize,
        len: usize,
        ids: Vec<u32>,
        attention_mask: Vec<bool>,
        segments: Vec<u32>,
    ) -> Result<Self, EncoderError> {
        let n = batch * len;
        if ids.len() != n || attention_mask.len() != n || segments.len() != n {
            return Err(EncoderError::InvalidInput(format!(
                "batch {batch} x len {len} needs {n} entries, got ids {} mask {} segments {}",
                ids.len(),
                attention_mask.len(),
                segments.len()
            )));
        }
        Ok(Self {
            batch,
            len,
            ids,
            attention_mask,
            segments,
        })
    }

    /// Stacks pre-training examples, cutting trailing columns that are
    /// padding in every row. Labels come back flattened the same way.
    pub fn from_examples(examples: &[&PretrainExample]) -> (Self, Vec<Option<u32>>) {
        let len = examples
            .iter()
            .map(|e| e.attention_mask.iter().rposition(|&m| m).map_or(0, |p| p + 1))
            .max()
            .unwrap_or(0);
        let n = examples.len() * len;
        let mut ids = Vec::with_capacity(n);
        let mut mask = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for e in examples {
            ids.extend_from_slice(&e.input_ids[..len]);
            mask.extend_from_slice(&e.attention_mask[..len]);
            labels.extend_from_slice(&e.labels[..len]);
        }
        (
            Self {
                batch: examples.len(),
                len,
                ids,
                attention_mask: mask,
                segments: vec![0; n],
            },
            labels,
        )
    }
}

/// Parameters recorded on a tape. In eval mode they are constants.
pub struct Bound<'a, T> {
    pub store: &'a ParamStore<T>,
    pub vars: Vec<Var>,
}

impl<'a, T: Float> Bound<'a, T> {
    pub fn new(tape: &mut Tape<T>, store: &'a ParamStore<T>) -> Self {
        let train = tape.mode() == Mode::Train;
        let vars = store
            .iter()
            .map(|p| {
                if train {
                    tape.param(p.tensor.clone())
                } else {
                    tape.constant(p.tensor.clone())
                }
            })
            .collect();
        Self { store, vars }
    }

    pub fn var(&self, name: &str) -> Result<Var, EncoderError> {
        self.store
            .position(name)
            .map(|i| self.vars[i])
            .ok_or_else(|| EncoderError::MissingParam(name.to_string()))
    }
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives distinct dropout keys for each dropout site of one forward pass.
pub struct DropoutKeys {
    base: u64,
    next: u64,
}

impl DropoutKeys {
    pub fn new(base: u64) -> Self {
        Self { base, next: 0 }
    }

    /// Key for a (seed, step, micro-batch) triple.
    pub fn for_step(seed: u64, step: u64, micro: u64) -> Self {
        Self::new(mix(mix(seed) ^ step.wrapping_mul(0x2545_f491_4f6c_dd1d) ^ micro))
    }

    pub fn next(&mut self) -> u64 {
        self.next += 1;
        mix(self.base ^ mix(self.next))
    }
}

pub(crate) fn linear<T: Float>(tape: &mut Tape<T>, x: Var, w: Var, b: Var) -> Result<Var, EncoderError> {
    let y = tape.matmul(x, w, false, false)?;
    Ok(tape.add(y, b)?)
}

/// Runs the encoder; returns hidden states flattened to `[batch * len, hidden]`.
pub fn encode_hidden<T: Float>(
    tape: &mut Tape<T>,
    model: &Bound<T>,
    cfg: &EncoderConfig,
    input: &EncoderInput,
    keys: &mut DropoutKeys,
) -> Result<Var, EncoderError> {
    let (b, l, h) = (input.batch, input.len, cfg.hidden_size);
    let (nh, dh) = (cfg.num_heads, cfg.head_dim());
    if l > cfg.max_positions {
        return Err(EncoderError::TooLong {
            len: l,
            max: cfg.max_positions,
        });
    }
    if b == 0 || l == 0 {
        return Err(EncoderError::InvalidInput("empty batch".into()));
    }
    if let Some(&id) = input.ids.iter().find(|&&id| id as usize >= cfg.vocab_size) {
        return Err(EncoderError::IdOutOfRange {
            id,
            vocab_size: cfg.vocab_size,
        });
    }
    if let Some(&s) = input.segments.iter().find(|&&s| s as usize >= cfg.type_vocab) {
        return Err(EncoderError::InvalidInput(format!(
            "segment id {s} outside type vocabulary of {}",
            cfg.type_vocab
        )));
    }
    for row in 0..b {
        if !input.attention_mask[row * l..(row + 1) * l].iter().any(|&m| m) {
            return Err(EncoderError::InvalidInput(format!(
                "batch row {row} has no attended position"
            )));
        }
    }
    let rate = cfg.dropout;
    let p = |name: &str| model.var(name);

    let ids: Vec<usize> = input.ids.iter().map(|&i| i as usize).collect();
    let positions: Vec<usize> = (0..b * l).map(|i| i % l).collect();
    let segments: Vec<usize> = input.segments.iter().map(|&s| s as usize).collect();
    let word = tape.gather_rows(p("emb.word")?, &ids)?;
    let pos = tape.gather_rows(p("emb.position")?, &positions)?;
    let seg = tape.gather_rows(p("emb.type")?, &segments)?;
    let x = tape.add(word, pos)?;
    let x = tape.add(x, seg)?;
    let x = tape.layer_norm(x, p("emb.ln.gamma")?, p("emb.ln.beta")?, LAYER_NORM_EPS)?;
    let mut x = tape.dropout(x, rate, keys.next())?;

    let mut bias = Vec::with_capacity(b * nh * l);
    for row in 0..b {
        for _ in 0..nh {
            bias.extend(input.attention_mask[row * l..(row + 1) * l].iter().map(|&m| {
                if m {
                    T::zero()
                } else {
                    T::neg_infinity()
                }
            }));
        }
    }
    let bias = tape.constant(Tensor::new(vec![b * nh, 1, l], bias)?);
    let scale = T::from_f64(1.0 / (dh as f64).sqrt());

    for layer in 0..cfg.num_layers {
        let name = |s: &str| format!("layer{layer}.{s}");
        let heads = |tape: &mut Tape<T>, v: Var| -> Result<Var, EncoderError> {
            let v = tape.reshape(v, &[b, l, nh, dh])?;
            let v = tape.permute(v, &[0, 2, 1, 3])?;
            Ok(tape.reshape(v, &[b * nh, l, dh])?)
        };
        let q = linear(tape, x, p(&name("attn.q.w"))?, p(&name("attn.q.b"))?)?;
        let k = linear(tape, x, p(&name("attn.k.w"))?, p(&name("attn.k.b"))?)?;
        let v = linear(tape, x, p(&name("attn.v.w"))?, p(&name("attn.v.b"))?)?;
        let (q, k, v) = (heads(tape, q)?, heads(tape, k)?, heads(tape, v)?);
        let scores = tape.matmul(q, k, false, true)?;
        let scores = tape.scale(scores, scale)?;
        let scores = tape.add(scores, bias)?;
        let probs = tape.softmax(scores)?;
        let probs = tape.dropout(probs, rate, keys.next())?;
        let ctx = tape.matmul(probs, v, false, false)?;
        let ctx = tape.reshape(ctx, &[b, nh, l, dh])?;
        let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = tape.reshape(ctx, &[b * l, h])?;
        let out = linear(tape, ctx, p(&name("attn.o.w"))?, p(&name("attn.o.b"))?)?;
        let out = tape.dropout(out, rate, keys.next())?;
        let res = tape.add(out, x)?;
        x = tape.layer_norm(
            res,
            p(&name("attn.ln.gamma"))?,
            p(&name("attn.ln.beta"))?,
            LAYER_NORM_EPS,
        )?;

        let f = linear(tape, x, p(&name("ffn.in.w"))?, p(&name("ffn.in.b"))?)?;
        let f = tape.gelu(f)?;
        let f = linear(tape, f, p(&name("ffn.out.w"))?, p(&name("ffn.out.b"))?)?;
        let f = tape.dropout(f, rate, keys.next())?;
        let res = tape.add(f, x)?;
        x = tape.layer_norm(res, p(&name("ffn.ln.gamma"))?, p(&name("ffn.ln.beta"))?, LAYER_NORM_EPS)?;
    }
    Ok(x)
}

/// Hidden states `[batch, len, hidden]`. Positions whose attention mask is
/// false are ignored as keys, so they never influence other positions.
pub fn encode_forward<T: Float>(
    params: &ParamStore<T>,
    cfg: &EncoderConfig,
    input: &EncoderInput,
    mode: Mode,
    dropout_key: u64,
) -> Result<Tensor<T>, EncoderError> {
    let mut tape = Tape::new(mode);
    let model = Bound::new(&mut tape, params);
    let mut keys = DropoutKeys::new(dropout_key);
    let hidden = encode_hidden(&mut tape, &model, cfg, input, &mut keys)?;
    Ok(tape
        .value(hidden)
        .clone()
        .reshaped(&[input.batch, input.len, cfg.hidden_size])?)
}

/// MLM logits `[rows, vocab]` for the selected rows of flattened hidden states.
pub fn mlm_logits<T: Float>(
    tape: &mut Tape<T>,
    model: &Bound<T>,
    hidden: Var,
    rows: &[usize],
) -> Result<Var, EncoderError> {
    let p = |name: &str| model.var(name);
    let x = tape.gather_rows(hidden, rows)?;
    let x = linear(tape, x, p("mlm.transform.w")?, p("mlm.transform.b")?)?;
    let x = tape.gelu(x)?;
    let x = tape.layer_norm(x, p("mlm.ln.gamma")?, p("mlm.ln.beta")?, LAYER_NORM_EPS)?;
    let logits = tape.matmul(x, p("emb.word")?, false, true)?;
    Ok(tape.add(logits, p("mlm.bias")?)?)
}

/// Fraction of rows whose arg-max column equals the target.
pub fn masked_accuracy<T: Float>(logits: &Tensor<T>, targets: &[usize]) -> f64 {
    if targets.is_empty() {
        return 0.0;
    }
    let hits = logits.argmax_rows().iter().zip(targets).filter(|(a, b)| a == b).count();
    hits as f64 / targets.len() as f64
}

pub struct MlmOutput {
    pub loss: Var,
    pub accuracy: f64,
    pub labeled: usize,
}

/// Cross-entropy over labeled positions only, with masked-position accuracy.
pub fn mlm_loss<T: Float>(
    tape: &mut Tape<T>,
    model: &Bound<T>,
    cfg: &EncoderConfig,
    input: &EncoderInput,
    labels: &[Option<u32>],
    keys: &mut DropoutKeys,
) -> Result<MlmOutput, EncoderError> {
    if labels.len() != input.ids.len() {
        return Err(EncoderError::InvalidInput(format!(
            "{} labels for {} positions",
            labels.len(),
            input.ids.len()
        )));
    }
    let (rows, targets): (Vec<usize>, Vec<usize>) = labels
        .iter()
        .enumerate()
        .filter_map(|(i, l)| l.map(|t| (i, t as usize)))
        .unzip();
    if rows.is_empty() {
        return Err(EncoderError::NoLabels);
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= cfg.vocab_size) {
        return Err(EncoderError::IdOutOfRange {
            id: t as u32,
            vocab_size: cfg.vocab_size,
        });
    }
    let hidden = encode_hidden(tape, model, cfg, input, keys)?;
    let logits = mlm_logits(tape, model, hidden, &rows)?;
    let accuracy = masked_accuracy(tape.value(logits), &targets);
    let targets: Vec<Option<usize>> = targets.into_iter().map(Some).collect();
    let loss = tape.cross_entropy(logits, &targets)?;
    Ok(MlmOutput {
        loss,
        accuracy,
        labeled: rows.len(),
    })
}
