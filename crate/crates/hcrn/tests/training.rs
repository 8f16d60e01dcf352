//! Training-loop integration checks: capacity (overfit a tiny dataset) and
//! the optimizer schedule end to end.

use hcrn::config::RunConfig;
use hcrn::metrics::MetricsSink;
use hcrn::synth::{self, TaskKind};
use hcrn::trainer;

fn overfit_config() -> RunConfig {
    RunConfig {
        task: TaskKind::Transition,
        n_clips: 5,
        frames_per_clip: 6,
        d: 32,
        d_in: 16,
        embed_dim: 16,
        t: 2,
        lr: 1e-3,
        lr_decay_every: 1000,
        epochs: 100, // 32 samples / batch 16 = 2 steps per epoch
        batch_size: 16,
        n_train: 32,
        n_val: 8,
        n_test: 8,
        n_actions: 4,
        max_reps: 3,
        sigma: 0.1,
        resample_per_step: false,
        ..RunConfig::default()
    }
}

#[test]
fn overfits_32_samples_within_200_steps() {
    let config = overfit_config();
    let dataset = synth::generate(&config.dataset_spec()).unwrap();
    let mut sink = MetricsSink::in_memory();
    let outcome = trainer::train(&config, &dataset, &mut sink).unwrap();
    assert!(outcome.steps <= 200, "took {} steps", outcome.steps);
    let (metric, train_acc) =
        trainer::evaluate(&outcome.final_params, &config, &dataset.train).unwrap();
    assert_eq!(metric, "accuracy");
    assert!(
        train_acc >= 0.99,
        "capacity check: expected >= 0.99 train accuracy within 200 steps, got {train_acc}"
    );
}
