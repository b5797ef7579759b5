//! BERT-style transformer encoder: post-norm layers, GELU feed-forward,
//! learned absolute positions, and an MLM head whose output projection is
//! tied to the word embeddings.

mod checkpoint;
mod config;
mod model;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CheckpointError,
    CHECKPOINT_VERSION,
};
pub use config::{count_params, EncoderConfig};
pub(crate) use model::linear;
pub use model::{
    encode_forward, encode_hidden, init_params, init_tensor, masked_accuracy, mlm_logits, mlm_loss, param_layout,
    Bound, DropoutKeys, EncoderInput, MlmOutput, INIT_STD,
};

use tensorcore::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("token id {id} is outside the vocabulary of {vocab_size}")]
    IdOutOfRange { id: u32, vocab_size: usize },
    #[error("sequence length {len} exceeds max_positions {max}")]
    TooLong { len: usize, max: usize },
    #[error("batch has no labeled positions")]
    NoLabels,
    #[error("parameter {0} is missing")]
    MissingParam(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[cfg(test)]
mod tests {
    use super::*;
    use tensorcore::{Mode, ParamStore, Tape, Tensor};

    fn small() -> EncoderConfig {
        EncoderConfig {
            num_layers: 2,
            num_heads: 2,
            hidden_size: 16,
            intermediate_size: 32,
            vocab_size: 50,
            max_positions: 32,
            type_vocab: 2,
            dropout: 0.1,
            seed: 5,
        }
    }

    #[test]
    fn base_config_count() {
        let n = count_params(&EncoderConfig::base());
        assert_eq!(n, 110_650_880);
        assert!((108_000_000..=112_000_000).contains(&n));
    }

    #[test]
    fn zero_layers_by_hand() {
        let mut c = EncoderConfig::new(0, 2, 4, 10);
        c.max_positions = 6;
        // word 40 + position 24 + type 8 + norm 8 + transform 20 + norm 8 + bias 10
        assert_eq!(count_params(&c), 118);
    }

    #[test]
    fn vocab_delta_with_tying() {
        let a = EncoderConfig::base();
        let mut b = a.clone();
        b.vocab_size *= 2;
        let delta = 32000 * 768 + 32000;
        assert_eq!(count_params(&b) - count_params(&a), delta);
    }

    #[test]
    fn count_matches_instantiated_tensors() {
        for cfg in [small(), EncoderConfig::new(0, 1, 4, 7), EncoderConfig::new(3, 4, 8, 30)] {
            let p = init_params::<f32>(&cfg).unwrap();
            assert_eq!(p.numel() as u64, count_params(&cfg));
        }
    }

    #[test]
    fn init_is_deterministic_and_scaled() {
        let a = init_params::<f32>(&small()).unwrap();
        let b = init_params::<f32>(&small()).unwrap();
        assert_eq!(a, b);
        assert!(a.get("layer0.attn.q.b").unwrap().data().iter().all(|&x| x == 0.0));
        assert!(a.get("emb.ln.gamma").unwrap().data().iter().all(|&x| x == 1.0));
        let w = init_params::<f64>(&EncoderConfig::new(1, 1, 256, 4000)).unwrap();
        let d = w.get("emb.word").unwrap().data();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let std = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / d.len() as f64).sqrt();
        assert!((0.018..=0.022).contains(&std), "std {std}");
        assert!(d.iter().all(|x| x.abs() <= 2.0 * 0.02 / 0.8796 + 1e-12));
    }

    #[test]
    fn indivisible_heads_rejected() {
        let c = EncoderConfig::new(1, 3, 10, 10);
        assert!(matches!(init_params::<f32>(&c), Err(EncoderError::InvalidConfig(_))));
    }

    #[test]
    fn toml_round_trip_and_default_intermediate() {
        let c = small();
        let back: EncoderConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        let parsed: EncoderConfig =
            toml::from_str("num_layers = 1\nnum_heads = 2\nhidden_size = 8\nvocab_size = 9\n").unwrap();
        assert_eq!(parsed.intermediate_size, 32);
        assert!(
            toml::from_str::<EncoderConfig>("num_layers = 1\nnum_heads = 3\nhidden_size = 8\nvocab_size = 9\n")
                .is_err()
        );
        assert!(toml::from_str::<EncoderConfig>(
            "num_layers = 1\nnum_heads = 2\nhidden_size = 8\nvocab_size = 9\nbogus = 1\n"
        )
        .is_err());
    }

    fn input(rows: &[&[u32]], len: usize) -> EncoderInput {
        let mut ids = Vec::new();
        let mut mask = Vec::new();
        for r in rows {
            ids.extend_from_slice(r);
            ids.extend(std::iter::repeat(0).take(len - r.len()));
            mask.extend(r.iter().map(|_| true));
            mask.extend(std::iter::repeat(false).take(len - r.len()));
        }
        let n = ids.len();
        EncoderInput::new(rows.len(), len, ids, mask, vec![0; n]).unwrap()
    }

    #[test]
    fn output_shape() {
        let cfg = small();
        let p = init_params::<f32>(&cfg).unwrap();
        let rows: Vec<Vec<u32>> = (0..2).map(|r| (0..16).map(|i| (i * 3 + r) % 50).collect()).collect();
        let inp = input(&[&rows[0], &rows[1]], 16);
        let out = encode_forward(&p, &cfg, &inp, Mode::Eval, 0).unwrap();
        assert_eq!(out.shape(), &[2, 16, 16]);
    }

    #[test]
    fn padding_does_not_change_outputs() {
        let cfg = small();
        let p = init_params::<f32>(&cfg).unwrap();
        let a = encode_forward(&p, &cfg, &input(&[&[2, 7, 9, 3]], 4), Mode::Eval, 0).unwrap();
        let b = encode_forward(&p, &cfg, &input(&[&[2, 7, 9, 3]], 11), Mode::Eval, 0).unwrap();
        for pos in 0..4 {
            for j in 0..16 {
                let (x, y) = (a.data()[pos * 16 + j], b.data()[pos * 16 + j]);
                assert!((x - y).abs() <= 1e-5, "pos {pos}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn batch_order_is_irrelevant() {
        let cfg = small();
        let p = init_params::<f32>(&cfg).unwrap();
        let r0: &[u32] = &[2, 10, 11, 3];
        let r1: &[u32] = &[2, 20, 3];
        let ab = encode_forward(&p, &cfg, &input(&[r0, r1], 4), Mode::Eval, 0).unwrap();
        let ba = encode_forward(&p, &cfg, &input(&[r1, r0], 4), Mode::Eval, 0).unwrap();
        let w = 4 * 16;
        assert_eq!(&ab.data()[..w], &ba.data()[w..]);
        assert_eq!(&ab.data()[w..], &ba.data()[..w]);
    }

    #[test]
    fn input_validation() {
        let cfg = small();
        let p = init_params::<f32>(&cfg).unwrap();
        let bad_id = input(&[&[2, 99]], 2);
        assert!(matches!(
            encode_forward(&p, &cfg, &bad_id, Mode::Eval, 0),
            Err(EncoderError::IdOutOfRange { id: 99, .. })
        ));
        let long: Vec<u32> = vec![5; 40];
        assert!(matches!(
            encode_forward(&p, &cfg, &input(&[&long], 40), Mode::Eval, 0),
            Err(EncoderError::TooLong { .. })
        ));
    }

    #[test]
    fn untrained_loss_near_log_vocab() {
        let mut cfg = small();
        cfg.vocab_size = 500;
        let p = init_params::<f32>(&cfg).unwrap();
        let ids: Vec<u32> = (0..24).map(|i| (i * 37 + 11) % 500).collect();
        let inp = input(&[&ids], 24);
        let labels: Vec<Option<u32>> = ids
            .iter()
            .enumerate()
            .map(|(i, &t)| (i % 2 == 0).then_some(t))
            .collect();
        let mut tape = Tape::new(Mode::Eval);
        let model = Bound::new(&mut tape, &p);
        let out = mlm_loss(&mut tape, &model, &cfg, &inp, &labels, &mut DropoutKeys::new(0)).unwrap();
        let loss = tape.value(out.loss).item() as f64;
        let ln_v = (500f64).ln();
        assert!((loss - ln_v).abs() < 0.1 * ln_v, "loss {loss} vs ln V {ln_v}");
    }

    #[test]
    fn all_ignored_labels_error() {
        let cfg = small();
        let p = init_params::<f32>(&cfg).unwrap();
        let inp = input(&[&[2, 5, 3]], 3);
        let mut tape = Tape::new(Mode::Eval);
        let model = Bound::new(&mut tape, &p);
        let r = mlm_loss(&mut tape, &model, &cfg, &inp, &[None; 3], &mut DropoutKeys::new(0));
        assert!(matches!(r, Err(EncoderError::NoLabels)));
    }

    #[test]
    fn one_hot_logits_are_fully_accurate() {
        let targets = [3usize, 0, 2];
        let mut data = vec![0.0f32; 12];
        for (r, &t) in targets.iter().enumerate() {
            data[r * 4 + t] = 1.0;
        }
        let logits = Tensor::new(vec![3, 4], data).unwrap();
        assert_eq!(masked_accuracy(&logits, &targets), 1.0);
    }

    fn hash() -> String {
        "ab".repeat(32)
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = small();
        let params = init_params::<f32>(&cfg).unwrap();
        let mut adam = tensorcore::AdamState::new(&params, Default::default());
        adam.t = 7;
        adam.m[0].data_mut()[0] = 0.25;
        let ck = Checkpoint {
            config: cfg,
            vocab_hash: hash(),
            params,
            adam: Some(adam),
            meta: "step = 7\n".into(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&ck, &path).unwrap();
        let back = load_checkpoint::<f32>(&path, Some(&hash())).unwrap();
        assert_eq!(back, ck);
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
    }

    #[test]
    fn checkpoint_error_kinds() {
        let cfg = small();
        let ck = Checkpoint {
            config: cfg.clone(),
            vocab_hash: hash(),
            params: init_params::<f32>(&cfg).unwrap(),
            adam: None,
            meta: String::new(),
        };
        let bytes = encode_checkpoint(&ck).unwrap();
        let p = std::path::Path::new("x.ckpt");
        let truncated = &bytes[..bytes.len() - 100];
        assert!(matches!(
            decode_checkpoint::<f32>(truncated, p, None),
            Err(CheckpointError::Checksum { .. })
        ));
        assert!(matches!(
            decode_checkpoint::<f32>(&bytes[..5], p, None),
            Err(CheckpointError::Checksum { .. })
        ));
        assert!(matches!(
            decode_checkpoint::<f32>(&bytes, p, Some(&"cd".repeat(32))),
            Err(CheckpointError::VocabMismatch { .. })
        ));
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(
            decode_checkpoint::<f32>(&bad_magic, p, None),
            Err(CheckpointError::Magic { .. })
        ));
        let mut v2 = bytes[..bytes.len() - 32].to_vec();
        v2[8] = 2;
        let d = crate::util::sha256(&v2);
        v2.extend_from_slice(&d);
        assert!(matches!(
            decode_checkpoint::<f32>(&v2, p, None),
            Err(CheckpointError::Version { found: 2, .. })
        ));
    }

    #[test]
    fn f64_checkpoint_loads_as_f32() {
        let cfg = small();
        let params: ParamStore<f64> = init_params(&cfg).unwrap();
        let ck = Checkpoint {
            config: cfg,
            vocab_hash: hash(),
            params: params.clone(),
            adam: None,
            meta: String::new(),
        };
        let bytes = encode_checkpoint(&ck).unwrap();
        let back = decode_checkpoint::<f32>(&bytes, std::path::Path::new("x"), None).unwrap();
        assert_eq!(back.params, params.cast::<f32>());
    }
}
