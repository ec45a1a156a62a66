mod common;

use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use common::*;
use scenesync::gmm::*;
use scenesync::priors::*;
use scenesync::scene::{ClassTable, ObjectAttributes, SceneLayout};
use scenesync::synthgen::{generate, GrammarConfig, NIGHTSTAND};
use scenesync::Error;

fn boxed(s: [f64; 3], t: [f64; 3]) -> ObjectAttributes<f64> {
    ObjectAttributes { size: s, rotation: [0.0; 3], translation: t, shape_code: [0.0; 3] }
}

fn never_decreases(ll: &[f64]) -> bool {
    ll.windows(2).all(|w| w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0))
}

#[test]
fn em_is_monotone_on_random_data() {
    let mut r = rng(10);
    for i in 0..50 {
        let k = r.random_range(1..=4);
        let n = r.random_range(50..400);
        let centres: Vec<f64> = (0..3).map(|_| r.random_range(-5.0..5.0)).collect();
        if i % 2 == 0 {
            let xs: Vec<f64> = (0..n)
                .map(|_| centres[r.random_range(0..3)] + Normal::new(0.0, r.random_range(0.2..1.5)).unwrap().sample(&mut r))
                .collect();
            let fit = fit_gmm1_em(&xs, k, i).unwrap();
            assert!(never_decreases(&fit.log_likelihood), "dataset {i}: {:?}", fit.log_likelihood);
            fit.gmm.validate().unwrap();
        } else {
            let xs: Vec<[f64; 2]> = (0..n)
                .map(|_| {
                    let c = centres[r.random_range(0..3)];
                    [c + r.random_range(-1.0..1.0), -c + Normal::new(0.0, 0.7).unwrap().sample(&mut r)]
                })
                .collect();
            let fit = fit_gmm2_em(&xs, k, i).unwrap();
            assert!(never_decreases(&fit.log_likelihood), "dataset {i}: {:?}", fit.log_likelihood);
            fit.gmm.validate().unwrap();
        }
    }
}

#[test]
fn em_recovers_planted_means() {
    let mut r = rng(11);
    let n01 = Normal::new(0.0, 1.0).unwrap();
    let xs: Vec<f64> = (0..10_000)
        .map(|_| if r.random_bool(0.5) { 3.0 } else { -3.0 } + n01.sample(&mut r))
        .collect();
    let fit = fit_gmm1_em(&xs, 2, 0).unwrap();
    let mut means: Vec<f64> = fit.gmm.components.iter().map(|c| c.mean).collect();
    means.sort_by(f64::total_cmp);
    assert!((means[0] + 3.0).abs() < 0.1 && (means[1] - 3.0).abs() < 0.1, "{means:?}");
    assert!(fit.converged);
}

#[test]
fn single_component_is_the_closed_form_mle() {
    let xs = [1.0, 2.0, 4.0, 7.0, 11.0];
    let fit = fit_gmm1_em(&xs, 1, 3).unwrap();
    let mean = xs.iter().sum::<f64>() / 5.0;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 5.0;
    let c = fit.gmm.components[0];
    assert!((c.mean - mean).abs() < 1e-12);
    assert!((c.var - var).abs() < 1e-12);
    assert_eq!(c.weight, 1.0);
}

#[test]
fn constant_samples_get_floored_variance() {
    let fit = fit_gmm1_em(&[2.5; 30], 1, 0).unwrap();
    assert_eq!(fit.gmm.components.len(), 1);
    assert_eq!(fit.gmm.components[0].mean, 2.5);
    assert_eq!(fit.gmm.components[0].var, VARIANCE_FLOOR);
}

#[test]
fn too_many_components_is_an_error() {
    assert!(fit_gmm1_em(&[0.0, 1.0, 2.0], 4, 0).is_err());
    assert!(fit_gmm2_em(&[[0.0, 0.0], [1.0, 1.0]], 3, 0).is_err());
}

#[test]
fn em_is_deterministic_per_seed() {
    let mut r = rng(12);
    let xs: Vec<f64> = (0..500).map(|_| r.random_range(-4.0..4.0)).collect();
    let a = fit_gmm1_em(&xs, 3, 9).unwrap();
    let b = fit_gmm1_em(&xs, 3, 9).unwrap();
    assert_eq!(a.gmm, b.gmm);
    assert_eq!(a.log_likelihood, b.log_likelihood);
}

#[test]
fn generic_entry_dispatches_on_dimension() {
    let one: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
    assert!(matches!(fit_gmm_em(&one, 2, 0).unwrap().gmm, Gmm::One(_)));
    let two: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, (i * i) as f64]).collect();
    assert!(matches!(fit_gmm_em(&two, 2, 0).unwrap().gmm, Gmm::Two(_)));
    let three: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64; 3]).collect();
    assert!(fit_gmm_em(&three, 2, 0).is_err());
}

#[test]
fn standard_normal_logpdf_at_zero() {
    let g = Gmm1::single(0.0f64, 1.0);
    assert!((g.logpdf(0.0) + 0.918_938_533_204_672_7).abs() < 1e-15);
}

#[test]
fn symmetric_mixture_has_zero_gradient_at_midpoint() {
    let g = Gmm1::new(vec![
        Component1 { weight: 0.5, mean: -2.0, var: 0.7 },
        Component1 { weight: 0.5, mean: 2.0, var: 0.7 },
    ])
    .unwrap();
    assert_eq!(g.logpdf_grad(0.0), 0.0);
}

#[test]
fn logpdf_gradients_match_central_differences() {
    let mut r = rng(13);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let k = r.random_range(1..=6);
        let g1 = random_gmm1(&mut r, k, 3.0);
        let x = r.random_range(-4.0..4.0);
        let fd = central_diff(&[x], |p| g1.logpdf(p[0]));
        worst = worst.max(rel_err(&[g1.logpdf_grad(x)], &fd));

        let k = r.random_range(1..=4);
        let g2 = random_gmm2(&mut r, k, [0.0, 0.0]);
        let y = [r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)];
        let fd = central_diff(&y, |p| g2.logpdf([p[0], p[1]]));
        worst = worst.max(rel_err(&g2.logpdf_grad(y), &fd));
    }
    assert!(worst < 1e-6, "worst relative error {worst}");
}

#[test]
fn parameter_gradients_match_central_differences() {
    let mut r = rng(14);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let k = r.random_range(1..=4);
        let g1 = random_gmm1(&mut r, k, 3.0);
        let x = r.random_range(-4.0..4.0);
        let mut theta = Vec::new();
        g1.pack(&mut theta);
        let mut an = vec![0.0; g1.n_params()];
        g1.accumulate_logpdf_param_grad(x, 1.0, &mut an);
        let fd = central_diff(&theta, |p| {
            let mut h = g1.clone();
            h.unpack(p);
            h.logpdf(x)
        });
        worst = worst.max(rel_err(&an, &fd));
        let mut an = vec![0.0; g1.n_params()];
        g1.accumulate_pdf_param_grad(x, 1.0, &mut an);
        let fd = central_diff(&theta, |p| {
            let mut h = g1.clone();
            h.unpack(p);
            h.pdf(x)
        });
        worst = worst.max(rel_err(&an, &fd));

        let k = r.random_range(1..=3);
        let g2 = random_gmm2(&mut r, k, [0.0, 0.0]);
        let y = [r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)];
        let mut theta = Vec::new();
        g2.pack(&mut theta);
        let mut an = vec![0.0; g2.n_params()];
        g2.accumulate_logpdf_param_grad(y, 1.0, &mut an);
        let fd = central_diff(&theta, |p| {
            let mut h = g2.clone();
            h.unpack(p);
            h.logpdf(y)
        });
        worst = worst.max(rel_err(&an, &fd));
    }
    assert!(worst < 1e-5, "worst relative error {worst}");
}

#[test]
fn pack_unpack_preserves_the_density() {
    let mut r = rng(15);
    for _ in 0..50 {
        let g = random_gmm1(&mut r, 3, 2.0);
        let mut theta = Vec::new();
        g.pack(&mut theta);
        let mut h = random_gmm1(&mut r, 3, 2.0);
        let rest = h.unpack(&theta);
        assert!(rest.is_empty());
        for x in [-2.0, 0.1, 1.7] {
            assert!((g.logpdf(x) - h.logpdf(x)).abs() < 1e-12);
        }
    }
}

#[test]
fn mask_is_one_for_disjoint_boxes() {
    let a = boxed([1.0; 3], [0.0; 3]);
    let b = boxed([1.0; 3], [0.0, 0.0, 1.5]);
    assert_eq!(penetration_mask(&a, &b, false), 1.0);
}

#[test]
fn mask_of_coincident_unit_boxes() {
    let a = boxed([1.0; 3], [0.0; 3]);
    assert!((penetration_mask(&a, &a, false) - 0.367_879_441_171_442_3).abs() < 1e-15);
}

#[test]
fn mask_of_offset_double_boxes() {
    let a = boxed([2.0; 3], [0.0; 3]);
    let b = boxed([2.0; 3], [1.0, 0.0, 0.0]);
    let (depth, axis) = penetration_depth(&a, &b);
    assert_eq!((depth, axis), (1.0, Some(0)));
    assert!((penetration_mask(&a, &b, false) - (-1.0f64).exp()).abs() < 1e-15);
}

#[test]
fn allowed_pairs_are_never_masked() {
    let a = boxed([1.0; 3], [0.0; 3]);
    assert_eq!(penetration_mask(&a, &a, true), 1.0);
}

/// Interval test on explicit box corners.
fn boxes_overlap(a: &ObjectAttributes<f64>, b: &ObjectAttributes<f64>) -> bool {
    (0..3).all(|i| {
        let (alo, ahi) = (a.translation[i] - a.size[i] / 2.0, a.translation[i] + a.size[i] / 2.0);
        let (blo, bhi) = (b.translation[i] - b.size[i] / 2.0, b.translation[i] + b.size[i] / 2.0);
        alo.max(blo) < ahi.min(bhi)
    })
}

#[test]
fn mask_agrees_with_corner_overlap_test() {
    let mut r = rng(16);
    for _ in 0..10_000 {
        let a = boxed([r.random_range(0.1..2.0), r.random_range(0.1..2.0), r.random_range(0.1..2.0)], [0.0; 3]);
        let b = boxed(
            [r.random_range(0.1..2.0), r.random_range(0.1..2.0), r.random_range(0.1..2.0)],
            [r.random_range(-2.0..2.0), r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)],
        );
        let m = penetration_mask(&a, &b, false);
        assert!(m > 0.0 && m <= 1.0);
        assert_eq!(m == 1.0, !boxes_overlap(&a, &b));
    }
}

#[test]
fn count_prior_gradients_match_central_differences() {
    let table = small_table();
    let mut r = rng(17);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let prior = random_prior(&mut r, &table);
        let scene = random_scene(&mut r, &table);
        let (_, an) = count_prior_logpdf_indicators(&prior.counts, &scene);
        let z: Vec<f64> = scene.slots.iter().map(|s| s.indicator).collect();
        let fd = central_diff(&z, |p| {
            let mut s = scene.clone();
            s.slots.iter_mut().zip(p).for_each(|(sl, &zi)| sl.indicator = zi);
            count_prior_logpdf_indicators(&prior.counts, &s).0
        });
        worst = worst.max(rel_err(&an, &fd));
    }
    assert!(worst < 1e-6, "worst relative error {worst}");
}

#[test]
fn count_gradient_is_shared_within_a_class() {
    let table = small_table();
    let mut r = rng(18);
    let prior = random_prior(&mut r, &table);
    let scene = random_scene(&mut r, &table);
    let (_, g) = count_prior_logpdf_indicators(&prior.counts, &scene);
    for c in 0..table.num_classes() {
        let range = table.slot_range(c);
        assert!(g[range.clone()].iter().all(|x| *x == g[range.start]));
    }
}

#[test]
fn count_prior_peaks_at_the_mixture_mode() {
    let table = ClassTable::new([("a", 4)]).unwrap();
    let mut prior = PriorModel::<f64>::flat(table);
    let g = fit_count_mixture_1d(&[0.05, 0.15, 0.6, 0.15, 0.05], 2);
    let grid: Vec<f64> = (0..=4000).map(|i| i as f64 / 1000.0).collect();
    let mode = grid.iter().copied().max_by(|a, b| g.logpdf(*a).total_cmp(&g.logpdf(*b))).unwrap();
    prior.counts.class_mixtures = vec![Some(g)];
    let at_mode = count_prior_logpdf(&prior.counts, &[mode]).0;
    for &x in &grid {
        assert!(count_prior_logpdf(&prior.counts, &[x]).0 <= at_mode + 1e-12);
    }
    assert!((mode - 2.0).abs() < 0.05);
}

fn bedroom(n: usize, seed: u64) -> Vec<SceneLayout<f64>> {
    generate(&GrammarConfig::bedroom(), n, seed).unwrap()
}

#[test]
fn nightstand_table_peaks_at_two() {
    let prior = fit_priors(&bedroom(500, 1), &PriorFitConfig::default()).unwrap();
    let t = &prior.counts.class_tables[NIGHTSTAND];
    let peak = (0..t.len()).max_by(|&a, &b| t[a].total_cmp(&t[b])).unwrap();
    assert_eq!(peak, 2);
}

#[test]
fn count_tables_are_pmfs() {
    let prior = fit_priors(&bedroom(200, 2), &PriorFitConfig::default()).unwrap();
    for t in prior.counts.class_tables.iter().chain(&prior.counts.pair_tables) {
        assert!(t.iter().all(|p| *p >= 0.0));
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn single_class_corpus_has_only_the_self_pair() {
    let table = ClassTable::new([("only", 3)]).unwrap();
    let mut r = rng(19);
    let scenes: Vec<SceneLayout<f64>> = (0..20)
        .map(|_| {
            let mut s = SceneLayout::empty(table.clone());
            for (i, slot) in s.slots.iter_mut().enumerate() {
                slot.attrs = boxed([0.5; 3], [i as f64 * 2.0 + r.random_range(-0.3..0.3), r.random_range(-1.0..1.0), 0.0]);
                slot.indicator = if i < 2 || r.random_bool(0.5) { 1.0 } else { 0.0 };
            }
            s
        })
        .collect();
    let prior = fit_priors(&scenes, &PriorFitConfig::default()).unwrap();
    assert_eq!(prior.relative.len(), 1);
    assert!(prior.relative[0].is_some());
    assert!(prior.counts.pair_mixtures.is_empty());
}

#[test]
fn fit_priors_rejects_an_empty_corpus() {
    assert!(matches!(fit_priors::<f64>(&[], &PriorFitConfig::default()), Err(Error::Degenerate(_))));
}

#[test]
fn fit_priors_is_deterministic() {
    let scenes = bedroom(100, 3);
    let a = fit_priors(&scenes, &PriorFitConfig::default()).unwrap();
    let b = fit_priors(&scenes, &PriorFitConfig::default()).unwrap();
    assert_eq!(a, b);
    a.validate().unwrap();
}

#[test]
fn fitted_translation_pdfs_integrate_to_one() {
    let prior = fit_priors(&bedroom(300, 4), &PriorFitConfig::default()).unwrap();
    let mut r = rng(20);
    for axes in prior.translation.iter().flatten() {
        for g in axes {
            let lo = g.components.iter().map(|c| c.mean - 10.0 * c.var.sqrt()).fold(f64::INFINITY, f64::min);
            let hi = g.components.iter().map(|c| c.mean + 10.0 * c.var.sqrt()).fold(f64::NEG_INFINITY, f64::max);
            let n = 200_000;
            let mut acc = 0.0;
            for _ in 0..n {
                let x = r.random_range(lo..hi);
                acc += g.pdf(x);
            }
            let integral = acc / n as f64 * (hi - lo);
            assert!((integral - 1.0).abs() < 0.01, "integral {integral}");
        }
    }
}

#[test]
fn fitted_prior_beats_unit_gaussians_on_its_corpus() {
    let scenes = bedroom(200, 5);
    let fitted = fit_priors(&scenes, &PriorFitConfig::default()).unwrap();
    let mut unit = fitted.clone();
    let g = Gmm1::single(0.0, 1.0);
    unit.translation.iter_mut().for_each(|m| *m = Some([g.clone(), g.clone(), g.clone()]));
    unit.relative.iter_mut().for_each(|m| *m = Some([g.clone(), g.clone(), g.clone()]));
    let a = regularizer_l(&fitted, &scenes).unwrap();
    let b = regularizer_l(&unit, &scenes).unwrap();
    assert!(a.l1() < b.l1(), "{} vs {}", a.l1(), b.l1());
    assert!(a.total().is_finite() && b.total().is_finite());
}

#[test]
fn regularizer_gradient_matches_central_differences() {
    let scenes = bedroom(20, 6);
    let stats = TrainingStats::from_scenes(&scenes).unwrap();
    let table = scenes[0].class_table.clone();
    let mut r = rng(21);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let prior = random_prior(&mut r, &table);
        let mut theta = Vec::new();
        prior.pack(&mut theta);
        let mut an = vec![0.0; theta.len()];
        regularizer_with_grad(&prior, &stats, 1.0, Some(&mut an));
        let fd = central_diff(&theta, |p| {
            let mut q = prior.clone();
            q.unpack(p);
            regularizer_with_grad(&q, &stats, 1.0, None).total()
        });
        let scale = fd.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        worst = worst.max(an.iter().zip(&fd).map(|(a, b)| (a - b).abs() / b.abs().max(scale * 1e-3)).fold(0.0, f64::max));
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn regularizer_is_finite_for_valid_priors(seed in 0u64..1000) {
        let scenes = bedroom(5, 7);
        let mut r = rng(seed);
        let prior = random_prior(&mut r, &scenes[0].class_table);
        prop_assert!(regularizer_l(&prior, &scenes).unwrap().total().is_finite());
    }

    #[test]
    fn mask_lies_in_unit_interval(
        sa in prop::array::uniform3(0.0f64..3.0),
        sb in prop::array::uniform3(0.0f64..3.0),
        t in prop::array::uniform3(-3.0f64..3.0),
        allowed in any::<bool>(),
    ) {
        let m = penetration_mask(&boxed(sa, [0.0; 3]), &boxed(sb, t), allowed);
        prop_assert!(m > 0.0 && m <= 1.0);
    }
}
