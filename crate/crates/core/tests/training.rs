use bedrecon::features::{build_feature_tensor, FeatureTensor, FeatureToggles};
use bedrecon::nn::{Mode, ModelConfig, ModelState};
use bedrecon::pipeline::{coverage_mask, make_splits, ExperimentConfig, Splits};
use bedrecon::synth::{generate_scenario, Scenario, ScenarioParams};
use bedrecon::train::{train, TrainConfig, TrainOutcome, TrainingData};
use bedrecon::Error;

struct Fixture {
    scenario: Scenario,
    splits: Splits,
    features: FeatureTensor,
}

fn fixture() -> Fixture {
    let scenario = generate_scenario(64, 64, 5, &ScenarioParams::default()).unwrap();
    let splits = make_splits(64, 64, &ExperimentConfig::default()).unwrap();
    let region = coverage_mask(64, 64, &splits.train);
    let features = build_feature_tensor(&scenario.stack, FeatureToggles::default(), Some(&region)).unwrap();
    Fixture {
        scenario,
        splits,
        features,
    }
}

impl Fixture {
    fn data(&self) -> TrainingData<'_> {
        TrainingData {
            features: &self.features,
            observations: &self.scenario.observations,
            reference: &self.scenario.reference,
            train: &self.splits.train,
            validation: &self.splits.validation,
            patch_size: 16,
        }
    }

    fn model(&self, dropout: f64) -> ModelState {
        ModelState::new(ModelConfig {
            input_channels: self.features.channels(),
            filters: [4, 4, 8, 8, 8],
            dropout,
            seed: 3,
        })
        .unwrap()
    }
}

fn quick(iterations: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        max_iterations: iterations,
        patience: iterations,
        validation_interval: 5,
        half_period: 10,
        seed: 1,
        ..TrainConfig::default()
    }
}

fn run(f: &Fixture, dropout: f64, cfg: &TrainConfig) -> TrainOutcome {
    train(f.model(dropout), &f.data(), cfg).unwrap()
}

#[test]
fn best_validation_loss_matches_an_independent_recomputation() {
    let f = fixture();
    let data = f.data();
    let out = run(&f, 0.0, &quick(20));
    let (mean, std) = data.target_moments();
    assert_eq!(out.model.output_normalization(), (mean, std));

    // Pool every validation pixel and rebuild the weighted loss by hand.
    let mut model = out.model.clone();
    let mut pred = Vec::new();
    for chunk in data.validation.chunks(3) {
        pred.extend(model.forward(&data.inputs(chunk).unwrap(), Mode::Eval).unwrap().data);
    }
    let t = data.targets(data.validation);
    let (mut sr, mut nr, mut sm, mut nm) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..pred.len() {
        if t.radar_mask[i] {
            sr += (pred[i] - t.radar[i]).powi(2);
            nr += 1;
        } else if t.reference_mask[i] {
            sm += (pred[i] - t.reference[i]).powi(2);
            nm += 1;
        }
    }
    assert!(nr > 0 && nm > 0);
    let (l_r, l_m) = (sr / nr as f64, sm / nm as f64);
    let eps = TrainConfig::default().loss_epsilon;
    let s = l_r + l_m + eps;
    let expect = (l_m / s) * l_r + (l_r / s) * l_m;
    assert!((out.best_val_loss - expect).abs() <= 1e-9 * expect, "{} vs {expect}", out.best_val_loss);
}

#[test]
fn best_checkpoint_is_the_minimum_recorded_validation() {
    let f = fixture();
    let out = run(&f, 0.1, &quick(30));
    let recorded: Vec<(usize, f64)> = out.trace.iter().filter_map(|r| r.val_loss.map(|v| (r.iteration, v))).collect();
    assert_eq!(recorded.len(), 6);
    let (it, v) = recorded.iter().copied().fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
    assert_eq!(out.best_val_loss, v);
    assert_eq!(out.best_iteration, it);
    assert!(recorded.iter().all(|(_, x)| out.best_val_loss <= *x));
}

#[test]
fn trace_records_schedule_and_weights() {
    let f = fixture();
    let cfg = quick(25);
    let out = run(&f, 0.1, &cfg);
    assert_eq!(out.iterations_run, 25);
    assert_eq!(out.trace.len(), 25);
    for (i, r) in out.trace.iter().enumerate() {
        assert_eq!(r.iteration, i);
        assert!((r.gamma_r + r.gamma_m - (r.l_r + r.l_m) / (r.l_r + r.l_m + cfg.loss_epsilon)).abs() < 1e-12);
        assert!(r.lr >= cfg.base_lr && r.lr <= cfg.max_lr);
        assert_eq!(r.val_loss.is_some(), (i + 1) % 5 == 0);
    }
    assert_eq!(out.trace[10].lr, cfg.max_lr);
    assert_eq!(out.trace[20].lr, cfg.base_lr);
}

#[test]
fn training_is_deterministic() {
    let f = fixture();
    let a = run(&f, 0.1, &quick(15));
    let b = run(&f, 0.1, &quick(15));
    let bits = |o: &TrainOutcome| {
        o.trace
            .iter()
            .flat_map(|r| [r.total, r.l_r, r.l_m, r.val_loss.unwrap_or(0.0)].map(f64::to_bits))
            .collect::<Vec<_>>()
    };
    assert_eq!(bits(&a), bits(&b));
    let pa: Vec<u64> = a.model.params().iter().flat_map(|p| p.iter().map(|v| v.to_bits())).collect();
    let pb: Vec<u64> = b.model.params().iter().flat_map(|p| p.iter().map(|v| v.to_bits())).collect();
    assert_eq!(pa, pb);
}

#[test]
fn zero_patience_stops_at_the_first_non_improvement() {
    let f = fixture();
    let cfg = TrainConfig {
        patience: 0,
        validation_interval: 1,
        base_lr: 1e-2,
        max_lr: 1e-1,
        ..quick(60)
    };
    let out = run(&f, 0.1, &cfg);
    let vals: Vec<f64> = out.trace.iter().filter_map(|r| r.val_loss).collect();
    assert_eq!(vals.len(), out.iterations_run);
    for w in vals.windows(2).take(vals.len().saturating_sub(2)) {
        assert!(w[1] < w[0]);
    }
    if out.stopped_early {
        let n = vals.len();
        assert!(vals[n - 1] >= vals[..n - 1].iter().copied().fold(f64::INFINITY, f64::min));
        assert!(out.iterations_run < 60);
    }
}

#[test]
fn radar_only_mode_skips_batches_without_radar() {
    let f = fixture();
    let data = f.data();
    let radar_free = data
        .train
        .iter()
        .filter(|p| !data.targets(std::slice::from_ref(p)).radar_mask.iter().any(|m| *m))
        .count();
    assert!(radar_free > 0, "fixture needs patches without radar cells");
    let cfg = TrainConfig {
        batch_size: 1,
        use_reference_loss: false,
        ..quick(data.train.len())
    };
    let out = run(&f, 0.1, &cfg);
    assert_eq!(out.skipped_batches, radar_free);
    assert_eq!(out.trace.len() + out.skipped_batches, out.iterations_run);
    assert!(out.trace.iter().all(|r| r.gamma_r == 1.0 && r.gamma_m == 0.0 && r.total == r.l_r));
}

#[test]
fn exploding_updates_are_reported() {
    let f = fixture();
    let cfg = TrainConfig {
        base_lr: 1e300,
        max_lr: 1e300,
        ..quick(10)
    };
    match train(f.model(0.0), &f.data(), &cfg) {
        Err(Error::Diverged { .. }) | Err(Error::NonFiniteGradient { .. }) => {}
        other => panic!("expected divergence, got {:?}", other.map(|o| o.iterations_run)),
    }
}

#[test]
fn channel_mismatch_is_rejected() {
    let f = fixture();
    let model = ModelState::new(ModelConfig {
        input_channels: 3,
        ..ModelConfig::reduced(3)
    })
    .unwrap();
    assert!(matches!(train(model, &f.data(), &quick(2)), Err(Error::Dimension(_))));
}
