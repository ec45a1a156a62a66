//! Evaluation metrics: relative-attribute histogram divergence, indicator
//! precision/recall, penetration rate, and per-group attribute error.

use crate::error::{Error, Result};
use crate::priors::penetration_depth;
use crate::real::Real;
use crate::relative::{phi, EDGE_DIM};
use crate::rotation::{euler_to_rotation, geodesic_angle};
use crate::scene::SceneLayout;

pub const DEFAULT_BINS: usize = 64;
pub const HIST_EPS: f64 = 1e-6;

fn check_matched<T: Real>(a: &[SceneLayout<T>], b: &[SceneLayout<T>]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(format!("{} predicted scenes vs {} ground-truth scenes", a.len(), b.len())));
    }
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        if x.class_table != y.class_table || x.len() != y.len() {
            return Err(Error::LengthMismatch(format!("scene {i}: class tables differ")));
        }
    }
    Ok(())
}

/// Channel `channel` of `φ(a_v, a_v')` over active ordered pairs of the given classes.
pub fn relative_samples<T: Real>(scenes: &[SceneLayout<T>], pair: (usize, usize), channel: usize) -> Vec<T> {
    let mut out = Vec::new();
    for s in scenes {
        let t = &s.class_table;
        for v in t.slot_range(pair.0) {
            if !s.is_active(v) {
                continue;
            }
            for w in t.slot_range(pair.1) {
                if v != w && s.is_active(w) {
                    out.push(phi(&s.slots[v].attrs, &s.slots[w].attrs).to_array()[channel]);
                }
            }
        }
    }
    out
}

fn histogram<T: Real>(xs: &[T], lo: T, width: T, bins: usize) -> Vec<T> {
    let mut h = vec![T::zero(); bins];
    for &x in xs {
        let b = ((x - lo) / width).floor().to_usize().unwrap_or(0).min(bins - 1);
        h[b] += T::one();
    }
    let n = T::from_usize(xs.len()).expect("count");
    let eps = T::lit(HIST_EPS);
    for v in &mut h {
        *v = *v / n + eps;
    }
    let z: T = h.iter().copied().sum();
    h.iter_mut().for_each(|v| *v /= z);
    h
}

/// `KL(hist_a ‖ hist_b)` over one relative channel with shared uniform binning
/// across the pooled range. Each bin's frequency gets `HIST_EPS` before renormalizing.
pub fn relative_histogram_kl<T: Real>(
    scenes_a: &[SceneLayout<T>],
    scenes_b: &[SceneLayout<T>],
    pair: (usize, usize),
    channel: usize,
    bins: usize,
) -> Result<T> {
    if channel >= EDGE_DIM || bins == 0 {
        return Err(Error::InvalidParameter(format!("channel {channel} / bins {bins} out of range")));
    }
    let name = |s: &[SceneLayout<T>]| {
        s.first()
            .map(|x| format!("({}, {})", x.class_table.name(pair.0), x.class_table.name(pair.1)))
            .unwrap_or_else(|| format!("({}, {})", pair.0, pair.1))
    };
    let xa = relative_samples(scenes_a, pair, channel);
    let xb = relative_samples(scenes_b, pair, channel);
    if xa.is_empty() || xb.is_empty() {
        return Err(Error::Degenerate(format!("no active pairs of class pair {} found", name(scenes_a))));
    }
    let (mut lo, mut hi) = (T::infinity(), T::neg_infinity());
    for &x in xa.iter().chain(&xb) {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    if !(hi > lo) {
        lo -= T::lit(0.5);
        hi += T::lit(0.5);
    }
    let width = (hi - lo) / T::from_usize(bins).expect("bins");
    let (p, q) = (histogram(&xa, lo, width, bins), histogram(&xb, lo, width, bins));
    Ok(p.iter().zip(&q).map(|(&p, &q)| p * (p / q).ln()).sum::<T>().max(T::zero()))
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PrecisionRecall {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

impl PrecisionRecall {
    /// `None` when nothing was predicted active.
    pub fn precision(&self) -> Option<f64> {
        let d = self.true_positives + self.false_positives;
        (d > 0).then(|| self.true_positives as f64 / d as f64)
    }

    /// `None` when nothing is active in the ground truth.
    pub fn recall(&self) -> Option<f64> {
        let d = self.true_positives + self.false_negatives;
        (d > 0).then(|| self.true_positives as f64 / d as f64)
    }

    pub fn f1(&self) -> Option<f64> {
        let d = 2 * self.true_positives + self.false_positives + self.false_negatives;
        (d > 0).then(|| 2.0 * self.true_positives as f64 / d as f64)
    }

    fn add(&mut self, pred: bool, gt: bool) {
        match (pred, gt) {
            (true, true) => self.true_positives += 1,
            (true, false) => self.false_positives += 1,
            (false, true) => self.false_negatives += 1,
            (false, false) => {}
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IndicatorReport {
    pub per_class: Vec<PrecisionRecall>,
    pub overall: PrecisionRecall,
}

/// Slot-wise precision and recall of hardened indicators.
pub fn indicator_pr<T: Real>(pred: &[SceneLayout<T>], gt: &[SceneLayout<T>]) -> Result<IndicatorReport> {
    check_matched(pred, gt)?;
    let nc = gt.first().map_or(0, |s| s.class_table.num_classes());
    let mut per_class = vec![PrecisionRecall::default(); nc];
    let mut overall = PrecisionRecall::default();
    for (p, g) in pred.iter().zip(gt) {
        for v in 0..g.len() {
            let (a, b) = (p.is_active(v), g.is_active(v));
            per_class[g.class_table.class_of(v)].add(a, b);
            overall.add(a, b);
        }
    }
    Ok(IndicatorReport { per_class, overall })
}

/// Fraction of active object pairs whose boxes overlap on all three axes.
pub fn penetration_rate<T: Real>(scenes: &[SceneLayout<T>]) -> T {
    let (mut pairs, mut hits) = (0usize, 0usize);
    for s in scenes {
        let active: Vec<usize> = s.active_slots().collect();
        for (i, &v) in active.iter().enumerate() {
            for &w in &active[i + 1..] {
                pairs += 1;
                if penetration_depth(&s.slots[v].attrs, &s.slots[w].attrs).0 > T::zero() {
                    hits += 1;
                }
            }
        }
    }
    if pairs == 0 {
        T::zero()
    } else {
        T::from_usize(hits).expect("count") / T::from_usize(pairs).expect("count")
    }
}

/// Mean per-object error by channel group.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AttributeL2<T> {
    pub size: T,
    /// Geodesic angle between predicted and true rotation, radians.
    pub rotation: T,
    pub translation: T,
    /// Objects averaged over.
    pub count: usize,
}

fn norm3<T: Real>(a: &[T; 3], b: &[T; 3]) -> T {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Mean Euclidean error per channel group, optionally over ground-truth-active slots only.
pub fn attribute_l2<T: Real>(pred: &[SceneLayout<T>], gt: &[SceneLayout<T>], mask_to_active: bool) -> Result<AttributeL2<T>> {
    check_matched(pred, gt)?;
    let mut acc = AttributeL2 {
        size: T::zero(),
        rotation: T::zero(),
        translation: T::zero(),
        count: 0,
    };
    for (p, g) in pred.iter().zip(gt) {
        for v in 0..g.len() {
            if mask_to_active && !g.is_active(v) {
                continue;
            }
            let (a, b) = (&p.slots[v].attrs, &g.slots[v].attrs);
            acc.size += norm3(&a.size, &b.size);
            acc.translation += norm3(&a.translation, &b.translation);
            acc.rotation += geodesic_angle(&euler_to_rotation(&a.rotation), &euler_to_rotation(&b.rotation));
            acc.count += 1;
        }
    }
    if acc.count > 0 {
        let n = T::from_usize(acc.count).expect("count");
        acc.size /= n;
        acc.rotation /= n;
        acc.translation /= n;
    }
    Ok(acc)
}
