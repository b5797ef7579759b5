//! Central-difference gradient oracle for a whole model.

use mlmkit::encoder::{init_params, mlm_loss, Bound, DropoutKeys, EncoderConfig, EncoderInput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensorcore::{Mode, ParamStore, Tape};

pub const H: f64 = 1e-5;
pub const DENOM_FLOOR: f64 = 1e-5;

pub fn tiny_config(seed: u64) -> EncoderConfig {
    EncoderConfig {
        num_layers: 2,
        num_heads: 2,
        hidden_size: 8,
        intermediate_size: 16,
        vocab_size: 23,
        max_positions: 12,
        type_vocab: 2,
        dropout: 0.1,
        seed,
    }
}

pub struct Instance {
    pub cfg: EncoderConfig,
    pub params: ParamStore<f64>,
    pub input: EncoderInput,
    pub labels: Vec<Option<u32>>,
    pub dropout_key: u64,
}

/// Random parameters, a 2-row batch with padding, random labels.
pub fn random_instance(seed: u64) -> Instance {
    let cfg = tiny_config(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let mut params: ParamStore<f64> = init_params(&cfg).unwrap();
    // Move norms and biases away from their special initial values so every
    // gradient path is exercised.
    for i in 0..params.len() {
        for v in params.tensor_mut(i).data_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
    }
    let (batch, len) = (2, rng.gen_range(3..7));
    let mut ids = Vec::new();
    let mut mask = Vec::new();
    let mut segments = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..batch {
        let active = rng.gen_range(2..=len);
        for j in 0..len {
            ids.push(rng.gen_range(0..cfg.vocab_size as u32));
            mask.push(j < active);
            segments.push(rng.gen_range(0..2));
            labels.push((j < active && rng.gen_bool(0.5)).then(|| rng.gen_range(0..cfg.vocab_size as u32)));
        }
    }
    labels[0] = Some(1);
    Instance {
        input: EncoderInput::new(batch, len, ids, mask, segments).unwrap(),
        cfg,
        params,
        labels,
        dropout_key: rng.gen(),
    }
}

fn loss(inst: &Instance, params: &ParamStore<f64>, grads: bool) -> (f64, Vec<Vec<f64>>) {
    let mut tape = Tape::new(Mode::Train);
    let model = Bound::new(&mut tape, params);
    let mut keys = DropoutKeys::new(inst.dropout_key);
    let out = mlm_loss(&mut tape, &model, &inst.cfg, &inst.input, &inst.labels, &mut keys).unwrap();
    let value = tape.value(out.loss).item();
    if !grads {
        return (value, Vec::new());
    }
    let g = tape.backward(out.loss).unwrap();
    let grads = model
        .vars
        .iter()
        .zip(params.iter())
        .map(|(&v, p)| {
            g.get(v)
                .map(|t| t.data().to_vec())
                .unwrap_or_else(|| vec![0.0; p.tensor.numel()])
        })
        .collect();
    (value, grads)
}

/// Largest relative error between backprop and central differences over
/// every scalar parameter of the instance.
pub fn max_rel_error(inst: &Instance) -> f64 {
    let (_, analytic) = loss(inst, &inst.params, true);
    let mut params = inst.params.clone();
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        for j in 0..params.tensor(i).numel() {
            let orig = params.tensor(i).data()[j];
            params.tensor_mut(i).data_mut()[j] = orig + H;
            let plus = loss(inst, &params, false).0;
            params.tensor_mut(i).data_mut()[j] = orig - H;
            let minus = loss(inst, &params, false).0;
            params.tensor_mut(i).data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * H);
            let a = analytic[i][j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(DENOM_FLOOR);
            worst = worst.max(err);
        }
    }
    worst
}
