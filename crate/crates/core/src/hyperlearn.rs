//! Learning Φ on a validation set: a hinge margin that keeps the ground truth
//! below perturbed layouts, a smoothness penalty on nearby perturbations, and
//! the prior regularizer `l(Φ)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::likelihood::{evaluate, objective_f, HyperParams, PredictionBundle, Want};
use crate::metrics::attribute_l2;
use crate::optimizer::{synchronize, OptimizeConfig};
use crate::priors::{regularizer_with_grad, TrainingStats};
use crate::real::Real;
use crate::scene::{ObjectAttributes, SceneLayout};

/// Consecutive rising epochs that trigger a learning-rate halving.
pub const DIVERGENCE_EPOCHS: usize = 10;
/// Scores closer than this count as tied during meta search.
pub const SCORE_TIE_TOL: f64 = 1e-12;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperLearnConfig {
    /// Variance of the margin perturbations around the ground truth.
    pub margin_radius: f64,
    /// Variance of the smoothness perturbations around each margin sample.
    pub smooth_radius: f64,
    pub margin: f64,
    pub smooth_weight: f64,
    pub samples_per_instance: usize,
    pub inner_samples: usize,
    pub learn_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Perturb indicator channels along with the attributes.
    pub perturb_indicators: bool,
    /// Multiplier on `l(Φ)`.
    pub reg_weight: f64,
}

impl Default for HyperLearnConfig {
    fn default() -> Self {
        Self {
            margin_radius: 0.1,
            smooth_radius: 0.01,
            margin: 0.1,
            smooth_weight: 0.1,
            samples_per_instance: 8,
            inner_samples: 4,
            learn_rate: 0.1,
            epochs: 100,
            seed: 0,
            perturb_indicators: true,
            reg_weight: 1.0,
        }
    }
}

impl HyperLearnConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("margin_radius", self.margin_radius),
            ("smooth_radius", self.smooth_radius),
            ("margin", self.margin),
            ("learn_rate", self.learn_rate),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.smooth_weight >= 0.0) || !(self.reg_weight >= 0.0) {
            return Err(Error::InvalidParameter("smooth_weight and reg_weight must be non-negative".into()));
        }
        if self.samples_per_instance == 0 || (self.smooth_weight > 0.0 && self.inner_samples == 0) {
            return Err(Error::InvalidParameter("sample counts must be at least 1".into()));
        }
        Ok(())
    }

    /// The default meta grid: r_m ∈ {0.05, 0.1, 0.2}, r_s ∈ {0.01, 0.05},
    /// δ ∈ {0.1, 0.5}, λ_s ∈ {0, 0.1, 1}, other fields from `self`.
    pub fn default_grid(&self) -> Vec<Self> {
        let mut out = Vec::with_capacity(36);
        for &margin_radius in &[0.05, 0.1, 0.2] {
            for &smooth_radius in &[0.01, 0.05] {
                for &margin in &[0.1, 0.5] {
                    for &smooth_weight in &[0.0, 0.1, 1.0] {
                        out.push(Self {
                            margin_radius,
                            smooth_radius,
                            margin,
                            smooth_weight,
                            ..*self
                        });
                    }
                }
            }
        }
        out
    }
}

/// Prediction bundles paired with their ground-truth layouts.
#[derive(Clone, Debug, Default)]
pub struct ValidationSet<T> {
    pub instances: Vec<(PredictionBundle<T>, SceneLayout<T>)>,
}

impl<T: Real> ValidationSet<T> {
    pub fn new(instances: Vec<(PredictionBundle<T>, SceneLayout<T>)>) -> Result<Self> {
        let v = Self { instances };
        v.validate()?;
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, (b, gt)) in self.instances.iter().enumerate() {
            b.validate()?;
            if b.node_preds.class_table != gt.class_table || b.node_preds.len() != gt.len() {
                return Err(Error::Schema(format!("validation instance {i}: prediction and ground truth differ in shape")));
            }
        }
        Ok(())
    }

    /// Splits off the last `n` instances.
    pub fn split_tail(mut self, n: usize) -> (Self, Self) {
        let at = self.instances.len().saturating_sub(n);
        let tail = self.instances.split_off(at);
        (self, Self { instances: tail })
    }
}

/// Components of the hyper loss.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct HyperLoss<T> {
    pub total: T,
    pub regularizer: T,
    pub margin: T,
    pub smooth: T,
    /// Fraction of margin samples whose hinge is active.
    pub violation_rate: f64,
}

/// Order-independent key of an instance, used to seed its perturbations.
fn instance_key<T: Real>(gt: &SceneLayout<T>, preds: &PredictionBundle<T>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut mix = |x: f64| {
        for b in x.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    for s in gt.slots.iter().chain(&preds.node_preds.slots) {
        for a in s.attrs.to_array() {
            mix(a.to_f64().unwrap_or(0.0));
        }
        mix(s.indicator.to_f64().unwrap_or(0.0));
    }
    h
}

fn perturb<T: Real>(base: &SceneLayout<T>, var: f64, with_z: bool, rng: &mut ChaCha8Rng) -> SceneLayout<T> {
    let sd = var.sqrt();
    let mut out = base.clone();
    for s in &mut out.slots {
        let mut a = s.attrs.to_array();
        for x in a.iter_mut() {
            let e: f64 = StandardNormal.sample(rng);
            *x += T::lit(sd * e);
        }
        s.attrs = ObjectAttributes::from_array(&a);
        let e: f64 = StandardNormal.sample(rng);
        if with_z {
            s.indicator = (s.indicator + T::lit(sd * e)).max(T::zero()).min(T::one());
        }
    }
    out
}

struct InstanceTerm<T> {
    key: u64,
    margin: T,
    smooth: T,
    violations: usize,
    grad: Vec<T>,
}

fn instance_term<T: Real>(
    hyper: &HyperParams<T>,
    cfg: &HyperLearnConfig,
    preds: &PredictionBundle<T>,
    gt: &SceneLayout<T>,
    with_grad: bool,
) -> InstanceTerm<T> {
    let key = instance_key(gt, preds);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ key);
    let want = Want { hyper: with_grad, ..Default::default() };
    let np = hyper.n_params();
    let eg = evaluate(hyper, preds, gt, want);
    let ns = T::from_usize(cfg.samples_per_instance).expect("count");
    let delta = T::lit(cfg.margin);
    let lambda = T::lit(cfg.smooth_weight);
    let mut grad = if with_grad { vec![T::zero(); np] } else { Vec::new() };
    let (mut margin, mut smooth, mut violations) = (T::zero(), T::zero(), 0);
    for _ in 0..cfg.samples_per_instance {
        let y = perturb(gt, cfg.margin_radius, cfg.perturb_indicators, &mut rng);
        let ey = evaluate(hyper, preds, &y, want);
        let h = eg.value - ey.value + delta;
        if h > T::zero() {
            violations += 1;
            margin += h / ns;
            if with_grad {
                for ((g, &a), &b) in grad.iter_mut().zip(&eg.hyper_grad).zip(&ey.hyper_grad) {
                    *g += (a - b) / ns;
                }
            }
        }
        if cfg.smooth_weight > 0.0 {
            let nk = T::from_usize(cfg.inner_samples).expect("count") * ns;
            for _ in 0..cfg.inner_samples {
                let y2 = perturb(&y, cfg.smooth_radius, cfg.perturb_indicators, &mut rng);
                let e2 = evaluate(hyper, preds, &y2, want);
                let d = ey.value - e2.value;
                smooth += lambda * d * d / nk;
                if with_grad {
                    let c = T::lit(2.0) * lambda * d / nk;
                    for ((g, &a), &b) in grad.iter_mut().zip(&ey.hyper_grad).zip(&e2.hyper_grad) {
                        *g += c * (a - b);
                    }
                }
            }
        }
    }
    InstanceTerm {
        key,
        margin,
        smooth,
        violations,
        grad,
    }
}

fn loss_impl<T: Real>(
    hyper: &HyperParams<T>,
    cfg: &HyperLearnConfig,
    val: &ValidationSet<T>,
    stats: Option<&TrainingStats<T>>,
    with_grad: bool,
) -> (HyperLoss<T>, Vec<T>) {
    let np = hyper.n_params();
    let mut terms: Vec<InstanceTerm<T>> = val
        .instances
        .iter()
        .map(|(b, gt)| instance_term(hyper, cfg, b, gt, with_grad))
        .collect();
    terms.sort_by_key(|t| t.key);
    let mut grad = if with_grad { vec![T::zero(); np] } else { Vec::new() };
    let mut loss = HyperLoss::default();
    let mut violations = 0;
    for t in &terms {
        loss.margin += t.margin;
        loss.smooth += t.smooth;
        violations += t.violations;
        for (g, &d) in grad.iter_mut().zip(&t.grad) {
            *g += d;
        }
    }
    if let Some(stats) = stats.filter(|_| cfg.reg_weight > 0.0) {
        let w = T::lit(cfg.reg_weight);
        let off = hyper.robust.n_params();
        let reg = regularizer_with_grad(&hyper.prior, stats, w, with_grad.then(|| &mut grad[off..]));
        loss.regularizer = w * reg.total();
    }
    loss.total = loss.regularizer + loss.margin + loss.smooth;
    let drawn = terms.len() * cfg.samples_per_instance;
    loss.violation_rate = if drawn == 0 { 0.0 } else { violations as f64 / drawn as f64 };
    (loss, grad)
}

/// Monte Carlo hyper loss with perturbations drawn from `cfg.seed`.
///
/// `l(Φ)` is included when training statistics are supplied.
pub fn hyper_loss<T: Real>(
    hyper: &HyperParams<T>,
    cfg: &HyperLearnConfig,
    val: &ValidationSet<T>,
    stats: Option<&TrainingStats<T>>,
) -> HyperLoss<T> {
    loss_impl(hyper, cfg, val, stats, false).0
}

/// [`hyper_loss`] and its exact gradient in the packed layout of
/// [`HyperParams::pack`], with the perturbation draws held fixed.
pub fn hyper_loss_and_grad<T: Real>(
    hyper: &HyperParams<T>,
    cfg: &HyperLearnConfig,
    val: &ValidationSet<T>,
    stats: Option<&TrainingStats<T>>,
) -> (HyperLoss<T>, Vec<T>) {
    loss_impl(hyper, cfg, val, stats, true)
}

/// Fraction of perturbations `y ~ N(y_gt, rI)` with `f(y) < f(y_gt) + δ`.
///
/// Perturbed indicators are clamped to `[0, 1]` here and in the loss.
pub fn margin_violation_rate<T: Real>(
    hyper: &HyperParams<T>,
    val: &ValidationSet<T>,
    radius: f64,
    margin: f64,
    samples: usize,
    perturb_indicators: bool,
    seed: u64,
) -> f64 {
    let mut hits = 0usize;
    let mut total = 0usize;
    for (b, gt) in &val.instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ instance_key(gt, b));
        let fg = objective_f(hyper, b, gt);
        for _ in 0..samples {
            let y = perturb(gt, radius, perturb_indicators, &mut rng);
            if objective_f(hyper, b, &y) < fg + T::lit(margin) {
                hits += 1;
            }
            total += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

#[derive(Clone, Debug)]
pub struct LearnReport<T> {
    pub hyper: HyperParams<T>,
    pub initial_loss: T,
    pub best_loss: T,
    /// Loss at the start of every epoch.
    pub history: Vec<T>,
    pub restarts: usize,
}

/// Adam descent on the hyper loss; returns the best parameters seen.
pub fn learn_hyper<T: Real>(
    cfg: &HyperLearnConfig,
    val: &ValidationSet<T>,
    stats: Option<&TrainingStats<T>>,
    init: &HyperParams<T>,
) -> Result<LearnReport<T>> {
    cfg.validate()?;
    init.validate()?;
    val.validate()?;
    if val.is_empty() {
        return Err(Error::InvalidParameter("validation set is empty".into()));
    }
    let mut hyper = init.clone();
    let mut theta = init.pack();
    let n = theta.len();
    let (mut m, mut v) = (vec![0.0f64; n], vec![0.0f64; n]);
    let mut step = 0i32;
    let mut lr = cfg.learn_rate;
    let mut best_theta = theta.clone();
    let mut best = None::<T>;
    let mut history = Vec::with_capacity(cfg.epochs + 1);
    let mut rising = 0;
    let mut restarts = 0;
    for epoch in 0..=cfg.epochs {
        hyper.unpack(&theta);
        let (loss, grad) = hyper_loss_and_grad(&hyper, cfg, val, stats);
        let l = loss.total;
        if let Some(&prev) = history.last() {
            rising = if l > prev { rising + 1 } else { 0 };
        }
        history.push(l);
        log::debug!("hyper epoch {epoch}: loss {l} (violations {:.3})", loss.violation_rate);
        let finite = l.is_finite() && grad.iter().all(|g| g.is_finite());
        if finite && best.is_none_or(|b| l < b) {
            best = Some(l);
            best_theta.clone_from(&theta);
        }
        if epoch == cfg.epochs {
            break;
        }
        if !finite || rising >= DIVERGENCE_EPOCHS {
            if best.is_none() {
                return Err(Error::Numerical("hyper loss is not finite at the initial parameters".into()));
            }
            lr *= 0.5;
            restarts += 1;
            rising = 0;
            theta.clone_from(&best_theta);
            m.iter_mut().for_each(|x| *x = 0.0);
            v.iter_mut().for_each(|x| *x = 0.0);
            step = 0;
            log::info!("hyper loss diverging; learning rate halved to {lr}");
            continue;
        }
        step += 1;
        let (c1, c2) = (1.0 - ADAM_BETA1.powi(step), 1.0 - ADAM_BETA2.powi(step));
        for i in 0..n {
            let g = grad[i].to_f64().unwrap_or(0.0);
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
            theta[i] -= T::lit(lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS));
        }
    }
    hyper.unpack(&best_theta);
    Ok(LearnReport {
        hyper,
        initial_loss: history[0],
        best_loss: best.expect("initial loss is finite"),
        history,
        restarts,
    })
}

/// Mean of the size, rotation and translation errors of `synchronize` on `val`.
pub fn recovery_score<T: Real>(hyper: &HyperParams<T>, val: &ValidationSet<T>, opt: &OptimizeConfig) -> Result<T> {
    let mut pred = Vec::with_capacity(val.len());
    let mut gt = Vec::with_capacity(val.len());
    for (b, g) in &val.instances {
        pred.push(synchronize(hyper, b, opt)?.0);
        gt.push(g.clone());
    }
    let e = attribute_l2(&pred, &gt, true)?;
    Ok((e.size + e.rotation + e.translation) / T::lit(3.0))
}

#[derive(Clone, Debug)]
pub struct MetaSearch<T> {
    pub best: HyperLearnConfig,
    pub best_index: usize,
    pub best_hyper: HyperParams<T>,
    /// Held-out score per grid point, in grid order.
    pub scores: Vec<T>,
}

/// Learns Φ for every grid point on `train`, scores it on `heldout`, and returns
/// the lowest score. Ties go to the smaller margin, then the smaller margin radius.
pub fn cross_validate_meta<T: Real>(
    grid: &[HyperLearnConfig],
    train: &ValidationSet<T>,
    heldout: &ValidationSet<T>,
    stats: Option<&TrainingStats<T>>,
    init: &HyperParams<T>,
    opt: &OptimizeConfig,
) -> Result<MetaSearch<T>> {
    let runs = grid
        .iter()
        .map(|c| {
            let learned = learn_hyper(c, train, stats, init)?.hyper;
            let score = recovery_score(&learned, heldout, opt)?;
            Ok((learned, score))
        })
        .collect::<Result<Vec<_>>>()?;
    pick_best(grid, runs)
}

/// Selection step of [`cross_validate_meta`] over precomputed runs.
pub fn pick_best<T: Real>(grid: &[HyperLearnConfig], runs: Vec<(HyperParams<T>, T)>) -> Result<MetaSearch<T>> {
    if grid.is_empty() || grid.len() != runs.len() {
        return Err(Error::InvalidParameter("meta grid is empty or does not match the runs".into()));
    }
    let tol = T::lit(SCORE_TIE_TOL);
    let mut best = 0;
    for i in 1..grid.len() {
        let (s, b) = (runs[i].1, runs[best].1);
        let better = if (s - b).abs() <= tol {
            (grid[i].margin, grid[i].margin_radius) < (grid[best].margin, grid[best].margin_radius)
        } else {
            s < b || b.is_nan()
        };
        if better {
            best = i;
        }
    }
    let scores = runs.iter().map(|r| r.1).collect();
    let best_hyper = runs.into_iter().nth(best).expect("index in range").0;
    Ok(MetaSearch {
        best: grid[best],
        best_index: best,
        best_hyper,
        scores,
    })
}
