//! Central finite-difference oracle for the tensor primitives, in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensorcore::{Mode, Tape, Tensor, Var};

const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
/// Gradients that are zero up to rounding (e.g. layer norm over two
/// features) are compared against this floor instead of their own size.
const DENOM_FLOOR: f64 = 1e-5;

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Builds `sum(f(inputs) * weights)` so every output element carries a
/// distinct random weight, then compares the tape's gradient with central
/// differences of the same scalar.
fn max_rel_error<F>(inputs: &[Tensor<f64>], weights_seed: u64, f: F) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let scalar = |values: &[Tensor<f64>], record: bool| {
        let mut tape = Tape::new(Mode::Train);
        let vars: Vec<Var> = values.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars);
        let shape = tape.shape(out).to_vec();
        let mut wrng = ChaCha8Rng::seed_from_u64(weights_seed);
        let w = random_tensor(&mut wrng, &shape);
        let w = tape.constant(w);
        let prod = tape.mul(out, w).unwrap();
        let loss = tape.sum(prod).unwrap();
        let value = tape.value(loss).item();
        let grads = if record {
            let g = tape.backward(loss).unwrap();
            vars.iter()
                .map(|&v| g.get(v).cloned().unwrap_or_else(|| Tensor::zeros(tape.shape(v))))
                .collect()
        } else {
            Vec::new()
        };
        (value, grads)
    };

    let (_, analytic) = scalar(inputs, true);
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        for j in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[j] += H;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[j] -= H;
            let numeric = (scalar(&plus, false).0 - scalar(&minus, false).0) / (2.0 * H);
            let a = analytic[k].data()[j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(DENOM_FLOOR);
            worst = worst.max(err);
        }
    }
    worst
}

fn matmul_3x4_by_4x2(rng: &mut ChaCha8Rng) -> f64 {
    let a = random_tensor(rng, &[3, 4]);
    let b = random_tensor(rng, &[4, 2]);
    let seed = rng.gen();
    max_rel_error(&[a, b], seed, |t, v| t.matmul(v[0], v[1], false, false).unwrap())
}

fn matmul_transposed_and_batched(rng: &mut ChaCha8Rng) -> f64 {
    let (b, m, k, n) = (
        rng.gen_range(1..4),
        rng.gen_range(1..5),
        rng.gen_range(1..5),
        rng.gen_range(1..5),
    );
    let ta = rng.gen_bool(0.5);
    let tb = rng.gen_bool(0.5);
    let a_shape = if ta { [b, k, m] } else { [b, m, k] };
    let b_shape = if tb { [b, n, k] } else { [b, k, n] };
    let x = random_tensor(rng, &a_shape);
    let y = random_tensor(rng, &b_shape);
    let seed = rng.gen();
    max_rel_error(&[x, y], seed, move |t, v| t.matmul(v[0], v[1], ta, tb).unwrap())
}

fn broadcast_add_and_mul(rng: &mut ChaCha8Rng) -> f64 {
    let shape = [rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..4)];
    let b_shape = match rng.gen_range(0..4) {
        0 => vec![shape[2]],
        1 => vec![1, shape[1], 1],
        2 => vec![shape[0], 1, shape[2]],
        _ => shape.to_vec(),
    };
    let a = random_tensor(rng, &shape);
    let b = random_tensor(rng, &b_shape);
    let seed = rng.gen();
    let e1 = max_rel_error(&[a.clone(), b.clone()], seed, |t, v| t.add(v[0], v[1]).unwrap());
    let e2 = max_rel_error(&[a, b], seed, |t, v| t.mul(v[0], v[1]).unwrap());
    e1.max(e2)
}

fn reshape_permute_scale(rng: &mut ChaCha8Rng) -> f64 {
    let shape = [
        rng.gen_range(1..3),
        rng.gen_range(1..4),
        rng.gen_range(1..3),
        rng.gen_range(1..4),
    ];
    let a = random_tensor(rng, &shape);
    let seed = rng.gen();
    max_rel_error(&[a], seed, move |t, v| {
        let p = t.permute(v[0], &[0, 2, 1, 3]).unwrap();
        let r = t.reshape(p, &[shape[0] * shape[2], shape[1] * shape[3]]).unwrap();
        t.scale(r, 0.37).unwrap()
    })
}

fn softmax_gelu_tanh(rng: &mut ChaCha8Rng) -> f64 {
    let shape = [rng.gen_range(1..4), rng.gen_range(1..6)];
    let a = random_tensor(rng, &shape);
    let seed = rng.gen();
    let e1 = max_rel_error(&[a.clone()], seed, |t, v| t.softmax(v[0]).unwrap());
    let e2 = max_rel_error(&[a.clone()], seed, |t, v| t.gelu(v[0]).unwrap());
    let e3 = max_rel_error(&[a], seed, |t, v| t.tanh(v[0]).unwrap());
    e1.max(e2).max(e3)
}

fn layer_norm_all_inputs(rng: &mut ChaCha8Rng) -> f64 {
    let width = rng.gen_range(2..7);
    let rows = rng.gen_range(1..4);
    let x = random_tensor(rng, &[rows, width]);
    let g = random_tensor(rng, &[width]);
    let b = random_tensor(rng, &[width]);
    let seed = rng.gen();
    max_rel_error(&[x, g, b], seed, |t, v| {
        t.layer_norm(v[0], v[1], v[2], tensorcore::LAYER_NORM_EPS).unwrap()
    })
}

fn gather_rows_with_repeats(rng: &mut ChaCha8Rng) -> f64 {
    let rows = rng.gen_range(1..6);
    let width = rng.gen_range(1..4);
    let table = random_tensor(rng, &[rows, width]);
    let count = rng.gen_range(1..8);
    let ids: Vec<usize> = (0..count).map(|_| rng.gen_range(0..rows)).collect();
    let seed = rng.gen();
    max_rel_error(&[table], seed, move |t, v| t.gather_rows(v[0], &ids).unwrap())
}

fn dropout_with_fixed_key(rng: &mut ChaCha8Rng) -> f64 {
    let shape = [rng.gen_range(1..4), rng.gen_range(1..6)];
    let a = random_tensor(rng, &shape);
    let key = rng.gen();
    let seed = rng.gen();
    max_rel_error(&[a], seed, move |t, v| t.dropout(v[0], 0.3, key).unwrap())
}

fn cross_entropy_with_ignored_rows(rng: &mut ChaCha8Rng) -> f64 {
    let (n, c) = (rng.gen_range(1..5), rng.gen_range(2..6));
    let logits = random_tensor(rng, &[n, c]);
    let mut targets: Vec<Option<usize>> = (0..n).map(|_| rng.gen_bool(0.7).then(|| rng.gen_range(0..c))).collect();
    targets[0] = Some(rng.gen_range(0..c));
    let seed = rng.gen();
    max_rel_error(&[logits], seed, move |t, v| t.cross_entropy(v[0], &targets).unwrap())
}

fn mean_and_composition(rng: &mut ChaCha8Rng) -> f64 {
    let x = random_tensor(rng, &[3, 4]);
    let w = random_tensor(rng, &[4, 4]);
    let bias = random_tensor(rng, &[4]);
    let seed = rng.gen();
    max_rel_error(&[x, w, bias], seed, |t, v| {
        let h = t.matmul(v[0], v[1], false, true).unwrap();
        let h = t.add(h, v[2]).unwrap();
        let h = t.gelu(h).unwrap();
        let s = t.softmax(h).unwrap();
        t.mean(s).unwrap()
    })
}

pub type Check = fn(&mut ChaCha8Rng) -> f64;

/// Every primitive family with its randomized instance generator.
pub const CHECKS: &[(&str, Check)] = &[
    ("matmul-3x4x2", matmul_3x4_by_4x2),
    ("matmul-variants", matmul_transposed_and_batched),
    ("broadcast", broadcast_add_and_mul),
    ("shape-ops", reshape_permute_scale),
    ("pointwise", softmax_gelu_tanh),
    ("layer_norm", layer_norm_all_inputs),
    ("gather_rows", gather_rows_with_repeats),
    ("dropout", dropout_with_fixed_key),
    ("cross_entropy", cross_entropy_with_ignored_rows),
    ("composition", mean_and_composition),
];

/// Worst relative error of a check over `instances` random instances.
pub fn worst(name: &str, instances: usize, check: Check) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed ^ name.len() as u64);
    (0..instances).map(|_| check(&mut rng)).fold(0.0, f64::max)
}
