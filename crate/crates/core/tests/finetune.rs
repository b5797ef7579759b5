mod support {
    pub mod toy;
}

use mlmkit::heads::{TaskKind, TaskSpec};
use mlmkit::trainer::{
    finetune, grid_search, prefer, FinetuneGrid, FinetuneOptions, GridRow, HyperParams, TrainerError,
};
use support::toy::toy;

fn hp(batch: usize, lr: f64, epochs: usize) -> HyperParams {
    HyperParams { batch, lr, epochs }
}

#[test]
fn small_model_separates_the_toy_set() {
    let t = toy(200, 32, 1);
    let out = finetune(
        &t.params,
        &t.cfg,
        &t.task,
        &t.train,
        &t.dev,
        &hp(16, 1e-3, 3),
        &FinetuneOptions::default(),
    )
    .unwrap();
    assert_eq!(out.best_score, 1.0);
    assert_eq!(out.epoch_scores.len(), 3);
    assert_eq!(out.epoch_scores[out.best_epoch - 1], out.best_score);
    assert!(out.epoch_scores[..out.best_epoch - 1]
        .iter()
        .all(|&s| s < out.best_score));
    assert_eq!(out.report.score, out.best_score);
    assert!(out.params.position("head.cls.w").is_some());
    assert!(out.params.iter().all(|p| !p.name.starts_with("mlm.")));
}

#[test]
fn zero_epochs_is_an_error() {
    let t = toy(40, 16, 1);
    let err = finetune(
        &t.params,
        &t.cfg,
        &t.task,
        &t.train,
        &t.dev,
        &hp(16, 5e-5, 0),
        &FinetuneOptions::default(),
    );
    assert!(matches!(err, Err(TrainerError::InvalidSchedule(_))));
}

#[test]
fn same_seed_gives_identical_scores() {
    let t = toy(80, 16, 1);
    let run = || {
        finetune(
            &t.params,
            &t.cfg,
            &t.task,
            &t.train,
            &t.dev,
            &hp(16, 1e-3, 2),
            &FinetuneOptions::default(),
        )
        .unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.epoch_scores, b.epoch_scores);
    for (x, y) in a.params.iter().zip(b.params.iter()) {
        assert_eq!(x.tensor, y.tensor, "{}", x.name);
    }
}

#[test]
fn task_and_data_mismatch_is_an_error() {
    let t = toy(40, 16, 1);
    let task = TaskSpec {
        name: "tags".into(),
        kind: TaskKind::Tagging,
        labels: vec!["O".into()],
        pair: false,
    };
    let err = finetune(
        &t.params,
        &t.cfg,
        &task,
        &t.train,
        &t.dev,
        &hp(16, 5e-5, 2),
        &FinetuneOptions::default(),
    );
    assert!(matches!(err, Err(TrainerError::InvalidData(_))));
}

#[test]
fn full_grid_runs_eighteen_points() {
    let t = toy(32, 16, 1);
    let grid = FinetuneGrid::default();
    assert_eq!(grid.points().len(), 18);
    let out = grid_search(
        &t.params,
        &t.cfg,
        &t.task,
        &t.train,
        &t.dev,
        &grid,
        &FinetuneOptions::default(),
    )
    .unwrap();
    assert_eq!(out.rows.len(), 18);
    assert_eq!(out.table().lines().count(), 19);
    assert!(out.rows.iter().all(|r| !prefer(r, &out.rows[out.best])));
}

#[test]
fn single_point_grid_returns_that_point() {
    let t = toy(40, 16, 1);
    let grid = FinetuneGrid {
        batch_sizes: vec![32],
        learning_rates: vec![3e-5],
        epochs: vec![2],
        ..FinetuneGrid::default()
    };
    let out = grid_search(
        &t.params,
        &t.cfg,
        &t.task,
        &t.train,
        &t.dev,
        &grid,
        &FinetuneOptions::default(),
    )
    .unwrap();
    assert_eq!(out.rows.len(), 1);
    assert_eq!(out.rows[out.best].hp, hp(32, 3e-5, 2));
}

#[test]
fn empty_grid_is_rejected() {
    let t = toy(40, 16, 1);
    let grid = FinetuneGrid {
        epochs: vec![],
        ..FinetuneGrid::default()
    };
    assert!(grid_search(
        &t.params,
        &t.cfg,
        &t.task,
        &t.train,
        &t.dev,
        &grid,
        &FinetuneOptions::default()
    )
    .is_err());
}

#[test]
fn tie_break_order() {
    let row = |score, batch, lr, epochs| GridRow {
        hp: hp(batch, lr, epochs),
        score,
        best_epoch: 1,
    };
    assert!(prefer(&row(0.9, 32, 5e-5, 4), &row(0.8, 16, 2e-5, 2)));
    assert!(prefer(&row(1.0, 32, 2e-5, 4), &row(1.0, 16, 3e-5, 2)));
    assert!(!prefer(&row(1.0, 16, 3e-5, 2), &row(1.0, 32, 2e-5, 4)));
    assert!(prefer(&row(1.0, 16, 2e-5, 4), &row(1.0, 32, 2e-5, 2)));
    assert!(prefer(&row(1.0, 16, 2e-5, 2), &row(1.0, 16, 2e-5, 3)));
    assert!(!prefer(&row(1.0, 16, 2e-5, 2), &row(1.0, 16, 2e-5, 2)));
}

#[test]
fn equal_scores_select_the_smaller_learning_rate() {
    let t = toy(200, 32, 1);
    let grid = FinetuneGrid {
        batch_sizes: vec![16],
        learning_rates: vec![2e-3, 1e-3],
        epochs: vec![3],
        ..FinetuneGrid::default()
    };
    let out = grid_search(
        &t.params,
        &t.cfg,
        &t.task,
        &t.train,
        &t.dev,
        &grid,
        &FinetuneOptions::default(),
    )
    .unwrap();
    assert_eq!(out.rows[0].score, 1.0);
    assert_eq!(out.rows[1].score, 1.0);
    assert_eq!(out.best, 1);
    assert_eq!(out.rows[out.best].hp.lr, 1e-3);
}
