mod support {
    pub mod corpus;
    pub mod schedule_fixture;
}

use mlmkit::encoder::load_checkpoint;
use mlmkit::trainer::{pretrain, LogRecord, PretrainOptions, TrainerError};
use support::schedule_fixture::{fixture, schedule};

#[test]
fn one_phase_switch_at_configured_step() {
    let f = fixture();
    let opts = PretrainOptions {
        seed: 1,
        micro_batch: 0,
        checkpoint_every: 0,
        stop_after: None,
    };
    let mut log = Vec::new();
    let out = pretrain::<f32>(
        &f.cfg,
        &schedule(),
        &f.short,
        &f.long,
        &opts,
        &f.vocab.hash(),
        None,
        None,
        &mut log,
    )
    .unwrap();
    let switches: Vec<_> = out
        .records
        .iter()
        .filter_map(|r| match r {
            LogRecord::PhaseSwitch { step, .. } => Some(*step),
            _ => None,
        })
        .collect();
    assert_eq!(switches, vec![100]);
    let lines: Vec<&str> = std::str::from_utf8(&log).unwrap().lines().collect();
    assert_eq!(lines.len(), 201);
    assert!(lines[100].contains("\"event\":\"phase_switch\""));
    let first: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(first["step"], 0);
    assert_eq!(first["lr"], 0.0);
    assert!(out.records.iter().all(|r| match r {
        LogRecord::Step { step, phase, .. } => *phase == if *step < 100 { 1 } else { 2 },
        _ => true,
    }));
}

#[test]
fn resume_is_bit_exact() {
    let f = fixture();
    let sched = schedule();
    let hash = f.vocab.hash();
    let full_opts = PretrainOptions {
        seed: 5,
        micro_batch: 0,
        checkpoint_every: 0,
        stop_after: None,
    };
    let full = pretrain::<f32>(
        &f.cfg,
        &sched,
        &f.short,
        &f.long,
        &full_opts,
        &hash,
        None,
        None,
        &mut Vec::new(),
    )
    .unwrap();

    let dir = tempfile::tempdir().unwrap();
    let first_opts = PretrainOptions {
        checkpoint_every: 50,
        stop_after: Some(150),
        ..full_opts.clone()
    };
    let first = pretrain::<f32>(
        &f.cfg,
        &sched,
        &f.short,
        &f.long,
        &first_opts,
        &hash,
        None,
        Some(dir.path()),
        &mut Vec::new(),
    )
    .unwrap();
    assert_eq!(first.checkpoints.len(), 3);
    let ck = load_checkpoint::<f32>(&dir.path().join("step-00000150.ckpt"), Some(&hash)).unwrap();
    let resumed = pretrain::<f32>(
        &f.cfg,
        &sched,
        &f.short,
        &f.long,
        &full_opts,
        &hash,
        Some(ck),
        None,
        &mut Vec::new(),
    )
    .unwrap();
    assert_eq!(resumed.step, 200);
    assert_eq!(resumed.params, full.params);
    assert_eq!(resumed.adam, full.adam);
    assert_eq!(
        resumed.last_loss().unwrap().to_bits(),
        full.last_loss().unwrap().to_bits()
    );
}

#[test]
fn accumulation_matches_full_batch() {
    let f = fixture();
    let mut sched = schedule();
    sched.total_steps = 10;
    sched.warmup_steps = 2;
    sched.phase1_steps = 9;
    let mut cfg = f.cfg.clone();
    cfg.dropout = 0.0;
    let run = |micro| {
        let opts = PretrainOptions {
            seed: 2,
            micro_batch: micro,
            checkpoint_every: 0,
            stop_after: None,
        };
        pretrain::<f64>(
            &cfg,
            &sched,
            &f.short,
            &f.long,
            &opts,
            &f.vocab.hash(),
            None,
            None,
            &mut Vec::new(),
        )
        .unwrap()
    };
    let (a, b) = (run(0), run(1));
    for (x, y) in a.params.iter().zip(b.params.iter()) {
        for (u, v) in x.tensor.data().iter().zip(y.tensor.data()) {
            assert!((u - v).abs() < 1e-9, "{}: {u} vs {v}", x.name);
        }
    }
}

#[test]
fn missing_phase_two_data_fails_before_training() {
    let f = fixture();
    let opts = PretrainOptions {
        seed: 1,
        micro_batch: 0,
        checkpoint_every: 0,
        stop_after: None,
    };
    let mut log = Vec::new();
    let err = pretrain::<f32>(
        &f.cfg,
        &schedule(),
        &f.short,
        &[],
        &opts,
        &f.vocab.hash(),
        None,
        None,
        &mut log,
    );
    assert!(matches!(err, Err(TrainerError::InvalidData(_))));
    assert!(log.is_empty());
}
