#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scenesync::gmm::{Component1, Component2, Gmm1, Gmm2};
use scenesync::likelihood::{HyperParams, PredictionBundle, RobustClass, RobustPair, RobustParams, RobustForm};
use scenesync::priors::{unordered_pairs, CountPrior, PriorModel};
use scenesync::relative::{build_relative_tensor, EDGE_DIM};
use scenesync::scene::{ClassTable, ObjectAttributes, SceneLayout, NODE_DIM};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn small_table() -> ClassTable {
    ClassTable::new([("a", 2), ("b", 3), ("c", 2)]).unwrap()
}

/// Attributes with pitch well away from ±π/2.
pub fn random_attrs(r: &mut ChaCha8Rng) -> ObjectAttributes<f64> {
    ObjectAttributes {
        size: [r.random_range(0.2..2.0), r.random_range(0.2..2.0), r.random_range(0.2..2.0)],
        rotation: [r.random_range(-3.0..3.0), r.random_range(-1.2..1.2), r.random_range(-3.0..3.0)],
        translation: [r.random_range(-2.0..2.0), r.random_range(-2.0..2.0), r.random_range(-1.0..1.0)],
        shape_code: [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)],
    }
}

pub fn random_scene(r: &mut ChaCha8Rng, table: &ClassTable) -> SceneLayout<f64> {
    let mut s = SceneLayout::empty(table.clone());
    for slot in &mut s.slots {
        slot.attrs = random_attrs(r);
        slot.indicator = r.random_range(0.05..0.95);
    }
    s
}

/// A scene near `base`: attributes nudged, indicators redrawn.
pub fn perturbed(r: &mut ChaCha8Rng, base: &SceneLayout<f64>, scale: f64) -> SceneLayout<f64> {
    let mut s = base.clone();
    for slot in &mut s.slots {
        let mut a = slot.attrs.to_array();
        for (k, x) in a.iter_mut().enumerate() {
            // keep pitch away from gimbal lock
            let lim = if k == 4 { 0.2 * scale } else { scale };
            *x += r.random_range(-lim..lim);
        }
        a[0..3].iter_mut().for_each(|x| *x = x.abs().max(0.1));
        slot.attrs = ObjectAttributes::from_array(&a).canonicalized();
        slot.indicator = r.random_range(0.05..0.95);
    }
    s
}

pub fn random_gmm1(r: &mut ChaCha8Rng, k: usize, spread: f64) -> Gmm1<f64> {
    let w: Vec<f64> = (0..k).map(|_| r.random_range(0.2..1.0)).collect();
    let tot: f64 = w.iter().sum();
    Gmm1::new(
        w.iter()
            .map(|&wi| Component1 {
                weight: wi / tot,
                mean: r.random_range(-spread..spread),
                var: r.random_range(0.3..2.0),
            })
            .collect(),
    )
    .unwrap()
}

pub fn random_gmm2(r: &mut ChaCha8Rng, k: usize, centre: [f64; 2]) -> Gmm2<f64> {
    let w: Vec<f64> = (0..k).map(|_| r.random_range(0.2..1.0)).collect();
    let tot: f64 = w.iter().sum();
    Gmm2::new(
        w.iter()
            .map(|&wi| {
                let (a, b): (f64, f64) = (r.random_range(0.3..2.0), r.random_range(0.3..2.0));
                let c = r.random_range(-0.6..0.6) * (a * b).sqrt();
                Component2 {
                    weight: wi / tot,
                    mean: [centre[0] + r.random_range(-1.0..1.0), centre[1] + r.random_range(-1.0..1.0)],
                    cov: [[a, c], [c, b]],
                }
            })
            .collect(),
    )
    .unwrap()
}

fn axes(r: &mut ChaCha8Rng, k: usize) -> [Gmm1<f64>; 3] {
    [random_gmm1(r, k, 2.0), random_gmm1(r, k, 2.0), random_gmm1(r, k, 1.0)]
}

/// A prior with every term family present.
pub fn random_prior(r: &mut ChaCha8Rng, table: &ClassTable) -> PriorModel<f64> {
    let mut p = PriorModel::flat(table.clone());
    let nc = table.num_classes();
    p.translation = (0..nc).map(|_| Some(axes(r, 3))).collect();
    p.relative = (0..nc * nc).map(|_| Some(axes(r, 3))).collect();
    p.mask_enabled = (0..nc * nc).map(|_| r.random_bool(0.7)).collect();
    p.counts = CountPrior {
        class_mixtures: (0..nc)
            .map(|c| Some(random_gmm1(r, 2, table.slots_of(c) as f64)))
            .collect(),
        pair_mixtures: unordered_pairs(nc)
            .iter()
            .map(|&(a, b)| Some(random_gmm2(r, 2, [table.slots_of(a) as f64 / 2.0, table.slots_of(b) as f64 / 2.0])))
            .collect(),
        class_tables: p.counts.class_tables.clone(),
        pair_tables: p.counts.pair_tables.clone(),
    };
    p
}

pub fn random_robust(r: &mut ChaCha8Rng, table: &ClassTable) -> RobustParams<f64> {
    let nc = table.num_classes();
    RobustParams {
        classes: (0..nc)
            .map(|_| RobustClass {
                alpha: r.random_range(0.5..5.0),
                variances: std::array::from_fn::<f64, NODE_DIM, _>(|_| r.random_range(0.2..2.0)),
            })
            .collect(),
        pairs: (0..nc * nc)
            .map(|_| RobustPair {
                alpha: r.random_range(0.5..5.0),
                variances: std::array::from_fn::<f64, EDGE_DIM, _>(|_| r.random_range(0.2..2.0)),
            })
            .collect(),
    }
}

pub fn random_hyper(r: &mut ChaCha8Rng, table: &ClassTable, form: RobustForm, edge_gating: bool) -> HyperParams<f64> {
    HyperParams {
        robust: random_robust(r, table),
        prior: random_prior(r, table),
        edge_gating,
        form,
    }
}

/// Predictions near `truth`, with edges from the true scene plus noise.
pub fn noisy_bundle(r: &mut ChaCha8Rng, truth: &SceneLayout<f64>, scale: f64) -> PredictionBundle<f64> {
    let node_preds = perturbed(r, truth, scale);
    let mut edge_preds = build_relative_tensor(truth);
    let n = truth.len();
    for v in 0..n {
        for w in 0..n {
            if v != w {
                let mut e = *edge_preds.get(v, w);
                e.iter_mut().for_each(|x| *x += r.random_range(-scale..scale));
                edge_preds.set(v, w, e);
            }
        }
    }
    PredictionBundle { node_preds, edge_preds }
}

/// `max |a − b| / max(1, max |b|)`.
pub fn rel_err(analytic: &[f64], fd: &[f64]) -> f64 {
    let scale = fd.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    analytic.iter().zip(fd).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale
}

pub const FD_STEP: f64 = 1e-6;

/// Central differences of `f` at `x`.
pub fn central_diff(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut buf = x.to_vec();
    (0..x.len())
        .map(|i| {
            buf[i] = x[i] + FD_STEP;
            let hi = f(&buf);
            buf[i] = x[i] - FD_STEP;
            let lo = f(&buf);
            buf[i] = x[i];
            (hi - lo) / (2.0 * FD_STEP)
        })
        .collect()
}
