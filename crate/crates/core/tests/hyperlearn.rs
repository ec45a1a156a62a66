mod common;

use common::*;
use proptest::prelude::*;

use scenesync::hyperlearn::*;
use scenesync::likelihood::{HyperParams, PredictionBundle, RobustForm};
use scenesync::optimizer::OptimizeConfig;
use scenesync::priors::{PriorModel, TrainingStats};
use scenesync::relative::build_relative_tensor;
use scenesync::scene::{ClassTable, SceneLayout};

fn hard_scene(r: &mut rand_chacha::ChaCha8Rng, t: &ClassTable) -> SceneLayout<f64> {
    let mut s = random_scene(r, t);
    s.slots.iter_mut().for_each(|x| x.indicator = x.indicator.round());
    s
}

fn val_set(seed: u64, n: usize, noise: f64) -> ValidationSet<f64> {
    let mut r = rng(seed);
    let t = small_table();
    ValidationSet::new(
        (0..n)
            .map(|_| {
                let gt = hard_scene(&mut r, &t);
                let b = if noise > 0.0 {
                    noisy_bundle(&mut r, &gt, noise)
                } else {
                    PredictionBundle { node_preds: gt.clone(), edge_preds: build_relative_tensor(&gt) }
                };
                (b, gt)
            })
            .collect(),
    )
    .unwrap()
}

fn stats(seed: u64) -> TrainingStats<f64> {
    let mut r = rng(seed);
    let t = small_table();
    let scenes: Vec<_> = (0..20)
        .map(|_| {
            let mut s = hard_scene(&mut r, &t);
            s.slots[0].indicator = 1.0;
            s.slots[2].indicator = 1.0;
            s
        })
        .collect();
    TrainingStats::from_scenes(&scenes).unwrap()
}

fn small_cfg() -> HyperLearnConfig {
    HyperLearnConfig {
        samples_per_instance: 4,
        inner_samples: 2,
        margin: 1.0,
        margin_radius: 0.05,
        epochs: 10,
        ..Default::default()
    }
}

#[test]
fn gradient_matches_central_differences_with_fixed_draws() {
    let st = stats(1);
    let mut worst = 0.0f64;
    for seed in 0..8 {
        let mut r = rng(100 + seed);
        let form = if seed % 2 == 0 { RobustForm::Distance } else { RobustForm::Quadratic };
        let h = random_hyper(&mut r, &small_table(), form, true);
        let val = val_set(200 + seed, 2, 0.3);
        let cfg = HyperLearnConfig { seed, ..small_cfg() };
        let (_, an) = hyper_loss_and_grad(&h, &cfg, &val, Some(&st));
        let fd = central_diff(&h.pack(), |q| {
            let mut g = h.clone();
            g.unpack(q);
            hyper_loss(&g, &cfg, &val, Some(&st)).total
        });
        worst = worst.max(rel_err(&an, &fd));
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn loss_ignores_instance_order() {
    let mut r = rng(2);
    let h = random_hyper(&mut r, &small_table(), RobustForm::Distance, true);
    let val = val_set(3, 5, 0.3);
    let mut rev = val.clone();
    rev.instances.reverse();
    let (a, ga) = hyper_loss_and_grad(&h, &small_cfg(), &val, None);
    let (b, gb) = hyper_loss_and_grad(&h, &small_cfg(), &rev, None);
    assert_eq!(a.total.to_bits(), b.total.to_bits());
    assert_eq!(ga, gb);
}

#[test]
fn satisfied_margins_contribute_nothing() {
    let t = small_table();
    let h = HyperParams::with_defaults(PriorModel::flat(t.clone()));
    let val = val_set(4, 3, 0.0);
    let cfg = HyperLearnConfig { margin: 1e-9, margin_radius: 0.1, smooth_weight: 0.0, ..small_cfg() };
    let l = hyper_loss(&h, &cfg, &val, None);
    assert_eq!(l.margin, 0.0);
    assert_eq!(l.violation_rate, 0.0);
    assert_eq!(margin_violation_rate(&h, &val, 0.1, 1e-9, 8, true, 0), 0.0);
}

#[test]
fn zero_smoothness_weight_leaves_margin_and_regularizer() {
    let mut r = rng(5);
    let h = random_hyper(&mut r, &small_table(), RobustForm::Distance, true);
    let val = val_set(6, 3, 0.3);
    let st = stats(7);
    let cfg = HyperLearnConfig { smooth_weight: 0.0, ..small_cfg() };
    let l = hyper_loss(&h, &cfg, &val, Some(&st));
    assert_eq!(l.smooth, 0.0);
    assert_eq!(l.total, l.margin + l.regularizer);
    let with = hyper_loss(&h, &HyperLearnConfig { smooth_weight: 1.0, ..cfg }, &val, Some(&st));
    assert_eq!(with.total, with.margin + with.smooth + with.regularizer);
    assert!(with.smooth > 0.0);
    let no_reg = hyper_loss(&h, &cfg, &val, None);
    assert_eq!(no_reg.regularizer, 0.0);
    assert_eq!(no_reg.margin, l.margin);
}

#[test]
fn estimator_variance_shrinks_with_more_samples() {
    let mut r = rng(8);
    let h = random_hyper(&mut r, &small_table(), RobustForm::Distance, true);
    let val = val_set(9, 2, 0.3);
    let spread = |n: usize| {
        let xs: Vec<f64> = (0..40)
            .map(|seed| {
                let cfg = HyperLearnConfig { samples_per_instance: n, smooth_weight: 0.0, margin: 50.0, seed, ..small_cfg() };
                hyper_loss(&h, &cfg, &val, None).margin
            })
            .collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
    };
    let (few, many) = (spread(2), spread(32));
    assert!(many < few / 4.0, "variance {few} -> {many}");
}

#[test]
fn learning_does_not_increase_the_loss_and_keeps_parameters_valid() {
    let t = small_table();
    let init = HyperParams::with_defaults(PriorModel::flat(t));
    let val = val_set(10, 4, 0.2);
    let cfg = HyperLearnConfig { epochs: 15, ..small_cfg() };
    let rep = learn_hyper(&cfg, &val, None, &init).unwrap();
    assert!(rep.best_loss <= rep.initial_loss);
    assert_eq!(rep.history.len(), cfg.epochs + 1);
    assert_eq!(rep.history[0], rep.initial_loss);
    rep.hyper.validate().unwrap();
    for c in &rep.hyper.robust.classes {
        assert!(c.alpha > 0.0 && c.variances.iter().all(|&v| v > 0.0));
    }
    for p in &rep.hyper.robust.pairs {
        assert!(p.alpha > 0.0 && p.variances.iter().all(|&v| v > 0.0));
    }
    let again = learn_hyper(&cfg, &val, None, &init).unwrap();
    assert_eq!(again.hyper, rep.hyper);
    assert_eq!(again.history, rep.history);
}

#[test]
fn learning_rejects_bad_input() {
    let init = HyperParams::with_defaults(PriorModel::flat(small_table()));
    let empty = ValidationSet::<f64>::new(Vec::new()).unwrap();
    assert!(learn_hyper(&small_cfg(), &empty, None, &init).is_err());
    let val = val_set(11, 1, 0.1);
    assert!(learn_hyper(&HyperLearnConfig { learn_rate: 0.0, ..small_cfg() }, &val, None, &init).is_err());
    assert!(learn_hyper(&HyperLearnConfig { margin_radius: -1.0, ..small_cfg() }, &val, None, &init).is_err());
}

#[test]
fn one_point_grid_returns_that_point() {
    let init = HyperParams::with_defaults(PriorModel::flat(small_table()));
    let train = val_set(12, 2, 0.2);
    let held = val_set(13, 2, 0.2);
    let grid = [HyperLearnConfig { epochs: 3, ..small_cfg() }];
    let opt = OptimizeConfig { outer_iters: 2, ..Default::default() };
    let m = cross_validate_meta(&grid, &train, &held, None, &init, &opt).unwrap();
    assert_eq!(m.best_index, 0);
    assert_eq!(m.best, grid[0]);
    assert_eq!(m.scores.len(), 1);
    assert!(m.scores[0].is_finite());
    assert!(cross_validate_meta(&[], &train, &held, None, &init, &opt).is_err());
}

#[test]
fn ties_prefer_smaller_margin_then_radius() {
    let h = HyperParams::with_defaults(PriorModel::flat(small_table()));
    let base = HyperLearnConfig::default();
    let grid = [
        HyperLearnConfig { margin: 0.5, margin_radius: 0.05, ..base },
        HyperLearnConfig { margin: 0.1, margin_radius: 0.2, ..base },
        HyperLearnConfig { margin: 0.1, margin_radius: 0.1, ..base },
    ];
    let runs = |s: [f64; 3]| s.iter().map(|&x| (h.clone(), x)).collect::<Vec<_>>();
    assert_eq!(pick_best(&grid, runs([1.0, 1.0, 1.0])).unwrap().best_index, 2);
    assert_eq!(pick_best(&grid, runs([0.5, 1.0, 1.0])).unwrap().best_index, 0);
    assert_eq!(pick_best(&grid, runs([f64::NAN, 2.0, 3.0])).unwrap().best_index, 1);
    assert!(pick_best(&grid, runs([1.0, 1.0, 1.0])[..2].to_vec()).is_err());
}

#[test]
fn default_grid_covers_every_combination() {
    let g = HyperLearnConfig::default().default_grid();
    assert_eq!(g.len(), 36);
    for (i, a) in g.iter().enumerate() {
        a.validate().unwrap();
        assert!(g[i + 1..].iter().all(|b| b != a));
    }
}

#[test]
fn tail_split_keeps_order() {
    let val = val_set(14, 5, 0.1);
    let (head, tail) = val.clone().split_tail(2);
    assert_eq!((head.len(), tail.len()), (3, 2));
    assert_eq!(tail.instances[1].1, val.instances[4].1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn loss_is_finite_and_non_negative(seed in any::<u64>()) {
        let mut r = rng(seed);
        let h = random_hyper(&mut r, &small_table(), RobustForm::Distance, true);
        let val = val_set(seed ^ 1, 2, 0.3);
        let l = hyper_loss(&h, &HyperLearnConfig { seed, ..small_cfg() }, &val, None);
        prop_assert!(l.total.is_finite() && l.margin >= 0.0 && l.smooth >= 0.0);
        prop_assert!((0.0..=1.0).contains(&l.violation_rate));
    }
}
