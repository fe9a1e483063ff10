use gcsp_core::csp::{band_covariances, csp_cross_validate, LogisticConfig};
use gcsp_core::data::synth::{synth_generate, SynthProfile, SynthSpec};
use gcsp_core::graph::{perturbation_check, KernelWidth};
use gcsp_core::signal::{build_tf_stack, EpochDataset};
use gcsp_core::spd::random::rng_from_seed;
use gcsp_core::train::{fold_graph, run_train, stratified_folds, train_split, Evaluation, TrainConfig};
use rand::Rng;

fn dataset(profile: SynthProfile, trials: usize, seed: u64) -> EpochDataset {
    synth_generate(&SynthSpec {
        n_trials: trials,
        ..SynthSpec::standard(profile, seed)
    })
    .unwrap()
}

#[test]
fn synthetic_data_is_deterministic() {
    let a = dataset(SynthProfile::Default, 20, 4);
    assert_eq!(a, dataset(SynthProfile::Default, 20, 4));
    assert_ne!(a.data, dataset(SynthProfile::Default, 20, 5).data);
}

#[test]
fn adjacency_ignores_test_trials() {
    let ds = dataset(SynthProfile::Default, 60, 1);
    let cfg = TrainConfig::default();
    let plan = cfg.plan.resolve().unwrap();
    let folds = stratified_folds(&ds.labels, 5, 0).unwrap();
    let test = &folds[2];
    let train: Vec<usize> = (0..ds.n_trials).filter(|t| !test.contains(t)).collect();

    let stack = build_tf_stack(&ds, &plan, &cfg.covariance).unwrap();
    let g = fold_graph(&stack, &train, &cfg.directions, cfg.kernel_width).unwrap();

    let mut noisy = ds.clone();
    let mut rng = rng_from_seed(99);
    let per_trial = ds.n_channels * ds.n_samples;
    for &t in test {
        for v in &mut noisy.data[t * per_trial..(t + 1) * per_trial] {
            *v = 50.0 * rng.gen::<f64>();
        }
    }
    let noisy_stack = build_tf_stack(&noisy, &plan, &cfg.covariance).unwrap();
    let g2 = fold_graph(&noisy_stack, &train, &cfg.directions, cfg.kernel_width).unwrap();
    assert_eq!(g.adjacency, g2.adjacency);
    assert_eq!(g.kernel_width, g2.kernel_width);

    let all: Vec<usize> = (0..ds.n_trials).collect();
    let leaky = fold_graph(&noisy_stack, &all, &cfg.directions, cfg.kernel_width).unwrap();
    assert_ne!(g.adjacency, leaky.adjacency);

    for &t in &train {
        for r in perturbation_check(&stack.matrices[t], &g.adjacency).unwrap() {
            assert!(r.satisfied, "trial {t}: {r:?}");
        }
    }
}

#[test]
fn kernel_width_policy_changes_weights_only() {
    let ds = dataset(SynthProfile::Default, 30, 2);
    let cfg = TrainConfig::default();
    let stack = build_tf_stack(&ds, &cfg.plan.resolve().unwrap(), &cfg.covariance).unwrap();
    let train: Vec<usize> = (0..30).collect();
    let median = fold_graph(&stack, &train, &cfg.directions, KernelWidth::Median).unwrap();
    let fixed = fold_graph(&stack, &train, &cfg.directions, KernelWidth::Fixed(3.0)).unwrap();
    assert_eq!(median.edges, fixed.edges);
    assert_ne!(median.adjacency, fixed.adjacency);
}

#[test]
fn metrics_are_deterministic() {
    let ds = dataset(SynthProfile::Default, 40, 3);
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 8,
        seed: 11,
        evaluation: Evaluation::Kfold { k: 2 },
        ..TrainConfig::default()
    };
    let a = run_train(&cfg, &ds).unwrap();
    let b = run_train(&cfg, &ds).unwrap();
    for (fa, fb) in a.folds.iter().zip(&b.folds) {
        assert_eq!(fa.metrics_csv(), fb.metrics_csv());
    }
    assert_eq!(a.summary_json().unwrap(), b.summary_json().unwrap());
    let c = run_train(&TrainConfig { seed: 12, ..cfg }, &ds).unwrap();
    assert_ne!(a.folds[0].metrics_csv(), c.folds[0].metrics_csv());
}

#[test]
fn loss_decreases_from_initialization() {
    let ds = dataset(SynthProfile::Default, 100, 7);
    let stack_cfg = TrainConfig::default();
    let plan = stack_cfg.plan.resolve().unwrap();
    let stack = build_tf_stack(&ds, &plan, &stack_cfg.covariance).unwrap();
    let folds = stratified_folds(&ds.labels, 5, 0).unwrap();
    let train: Vec<usize> = folds[1..].iter().flatten().copied().collect();
    for seed in 0..5 {
        let cfg = TrainConfig {
            epochs: 20,
            seed,
            ..TrainConfig::default()
        };
        let r = train_split(&cfg, &stack, &plan, &train, &folds[0], 0).unwrap();
        assert!(r.final_train_loss < r.initial_loss, "seed {seed}: {} vs {}", r.final_train_loss, r.initial_loss);
        for s in &r.steps {
            assert!(s.min_reeig_eigenvalue >= cfg.reeig_eps);
            assert!(s.min_bias_eigenvalue > 0.0);
        }
    }
}

#[test]
fn zero_contrast_is_near_chance() {
    let ds = dataset(SynthProfile::ZeroContrast, 200, 9);
    let covs = band_covariances(&ds, (4.0, 40.0), (0.0, ds.duration()), 1e-5).unwrap();
    let folds = stratified_folds(&ds.labels, 10, 0).unwrap();
    let r = csp_cross_validate(&covs, &ds.labels, &folds, 4, &LogisticConfig::default()).unwrap();
    assert!((0.3..=0.7).contains(&r.mean_accuracy), "{}", r.mean_accuracy);
    assert!(r.max_distance_residual < 1e-8);
}
