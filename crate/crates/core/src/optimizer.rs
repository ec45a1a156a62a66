//! Alternating MAP synchronization: L-BFGS over continuous attributes, then
//! over relaxed indicators, repeated until the objective settles.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::lbfgs::{minimize, LbfgsConfig, LbfgsStatus};
use crate::likelihood::{evaluate, objective_f, HyperParams, PredictionBundle, Want};
use crate::real::{wrap_angle, Real};
use crate::scene::{SceneLayout, ROTATION, SIZE, TRANSLATION};

/// Channels moved by the attribute step (size, rotation, translation).
const FREE_DIM: usize = 9;

/// Outer iterations with `|Δf|` below this count toward early stopping.
pub const STALL_TOL: f64 = 1e-8;
const ACTIVE_SET_ROUNDS: usize = 5;
pub const STALL_ITERS: usize = 3;
/// Indicators at or above this value harden to 1.
pub const DEFAULT_HARDEN_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeConfig {
    pub outer_iters: usize,
    pub lbfgs_memory: usize,
    pub lbfgs_max_evals: usize,
    pub grad_tol: f64,
    pub z_bounds: [f64; 2],
    pub harden_threshold: f64,
    pub seed: u64,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            outer_iters: 25,
            lbfgs_memory: 10,
            lbfgs_max_evals: 200,
            grad_tol: 1e-6,
            z_bounds: [0.0, 1.0],
            harden_threshold: DEFAULT_HARDEN_THRESHOLD,
            seed: 0,
        }
    }
}

impl OptimizeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outer_iters == 0 || self.lbfgs_memory == 0 || self.lbfgs_max_evals == 0 {
            return Err(Error::InvalidParameter("iteration counts must be at least 1".into()));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::InvalidParameter("grad_tol must be positive".into()));
        }
        let [lo, hi] = self.z_bounds;
        if !(lo < hi) || !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) {
            return Err(Error::InvalidParameter("z_bounds must be an increasing sub-interval of [0,1]".into()));
        }
        if !(self.harden_threshold > 0.0 && self.harden_threshold < 1.0) {
            return Err(Error::InvalidParameter("harden_threshold must lie in (0,1)".into()));
        }
        Ok(())
    }

    fn lbfgs(&self) -> LbfgsConfig {
        LbfgsConfig {
            memory: self.lbfgs_memory,
            max_evals: self.lbfgs_max_evals,
            grad_tol: self.grad_tol,
            ..LbfgsConfig::default()
        }
    }
}

/// Outcome of one L-BFGS sub-step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord<T> {
    pub before: T,
    pub after: T,
    /// True when the step lowered the objective.
    pub accepted: bool,
    pub status: LbfgsStatus,
    pub evals: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizeReport<T> {
    /// Objective at the start and after every outer iteration.
    pub objective: Vec<T>,
    pub attribute_steps: Vec<StepRecord<T>>,
    pub indicator_steps: Vec<StepRecord<T>>,
    /// Objective of the hardened output scene.
    pub hardened_objective: T,
    pub final_scene: SceneLayout<T>,
    pub stopped_early: bool,
    /// Sub-steps whose line search failed (best iterate kept).
    pub line_search_failures: usize,
    pub wall_clock_secs: f64,
}

impl<T: Real> OptimizeReport<T> {
    /// True when the recorded objective never rises by more than `slack`.
    pub fn is_non_increasing(&self, slack: T) -> bool {
        self.objective.windows(2).all(|w| w[1] <= w[0] + slack)
    }
}

fn check_inputs<T: Real>(hyper: &HyperParams<T>, preds: &PredictionBundle<T>, y: &SceneLayout<T>) -> Result<()> {
    preds.validate()?;
    if y.class_table != hyper.prior.class_table || preds.node_preds.class_table != hyper.prior.class_table {
        return Err(Error::Schema("scene and hyperparameters use different class tables".into()));
    }
    if y.len() != preds.node_preds.len() {
        return Err(Error::Schema("scene and predictions differ in slot count".into()));
    }
    Ok(())
}

fn pack_free<T: Real>(y: &SceneLayout<T>) -> Vec<T> {
    let mut x = Vec::with_capacity(y.len() * FREE_DIM);
    for s in &y.slots {
        x.extend_from_slice(&s.attrs.size);
        x.extend_from_slice(&s.attrs.rotation);
        x.extend_from_slice(&s.attrs.translation);
    }
    x
}

fn unpack_free<T: Real>(x: &[T], y: &mut SceneLayout<T>) {
    for (s, chunk) in y.slots.iter_mut().zip(x.chunks_exact(FREE_DIM)) {
        s.attrs.size.copy_from_slice(&chunk[0..3]);
        s.attrs.rotation.copy_from_slice(&chunk[3..6]);
        s.attrs.translation.copy_from_slice(&chunk[6..9]);
    }
}

fn attribute_step<T: Real>(
    hyper: &HyperParams<T>,
    preds: &PredictionBundle<T>,
    y: &SceneLayout<T>,
    cfg: &OptimizeConfig,
) -> (SceneLayout<T>, StepRecord<T>) {
    let before = objective_f(hyper, preds, y);
    let x0 = pack_free(y);
    let mut work = y.clone();
    let mut fd_total = 0usize;
    let res = minimize(
        |x: &[T], g: &mut [T]| {
            unpack_free(x, &mut work);
            let ev = evaluate(hyper, preds, &work, Want { attrs: true, ..Default::default() });
            fd_total += ev.fd_fallbacks;
            for (gc, ga) in g.chunks_exact_mut(FREE_DIM).zip(&ev.attr_grad) {
                gc[0..3].copy_from_slice(&ga[SIZE..SIZE + 3]);
                gc[3..6].copy_from_slice(&ga[ROTATION..ROTATION + 3]);
                gc[6..9].copy_from_slice(&ga[TRANSLATION..TRANSLATION + 3]);
            }
            ev.value
        },
        &x0,
        &cfg.lbfgs(),
    );
    if fd_total > 0 {
        log::debug!("attribute step: {fd_total} edge Jacobians fell back to finite differences");
    }
    let mut out = y.clone();
    let (after, accepted) = if res.f < before {
        unpack_free(&res.x, &mut out);
        for s in &mut out.slots {
            for r in &mut s.attrs.rotation {
                *r = wrap_angle(*r);
            }
        }
        let wrapped = objective_f(hyper, preds, &out);
        (wrapped, true)
    } else {
        (before, false)
    };
    (
        out,
        StepRecord {
            before,
            after,
            accepted,
            status: res.status,
            evals: res.evals,
        },
    )
}

fn indicator_step<T: Real>(
    hyper: &HyperParams<T>,
    preds: &PredictionBundle<T>,
    y: &SceneLayout<T>,
    cfg: &OptimizeConfig,
) -> (SceneLayout<T>, StepRecord<T>) {
    let (lo, hi) = (T::lit(cfg.z_bounds[0]), T::lit(cfg.z_bounds[1]));
    let clamp = |z: T| z.max(lo).min(hi);
    let before = objective_f(hyper, preds, y);
    let mut work = y.clone();
    for s in &mut work.slots {
        s.indicator = clamp(s.indicator);
    }
    let mut best = before;
    let mut status = LbfgsStatus::GradientConverged;
    let mut evals = 0;
    for _ in 0..ACTIVE_SET_ROUNDS {
        let g0 = evaluate(hyper, preds, &work, Want { indicators: true, ..Default::default() }).indicator_grad;
        let free: Vec<usize> = (0..work.slots.len())
            .filter(|&i| {
                let z = work.slots[i].indicator;
                !((z <= lo && g0[i] > T::zero()) || (z >= hi && g0[i] < T::zero()))
            })
            .collect();
        if free.is_empty() {
            break;
        }
        let x0: Vec<T> = free.iter().map(|&i| work.slots[i].indicator).collect();
        let mut trial = work.clone();
        let res = minimize(
            |z: &[T], g: &mut [T]| {
                for (&i, &zi) in free.iter().zip(z) {
                    trial.slots[i].indicator = clamp(zi);
                }
                let ev = evaluate(hyper, preds, &trial, Want { indicators: true, ..Default::default() });
                for ((gi, &zi), &i) in g.iter_mut().zip(z).zip(&free) {
                    *gi = if zi >= lo && zi <= hi { ev.indicator_grad[i] } else { T::zero() };
                }
                ev.value
            },
            &x0,
            &cfg.lbfgs(),
        );
        evals += res.evals;
        status = res.status;
        if !(res.f < best) {
            break;
        }
        for (&i, &zi) in free.iter().zip(&res.x) {
            work.slots[i].indicator = clamp(zi);
        }
        let gain = best - res.f;
        best = res.f;
        if gain < T::lit(STALL_TOL) {
            break;
        }
    }
    let accepted = best < before;
    let (out, after) = if accepted { (work, best) } else { (y.clone(), before) };
    (
        out,
        StepRecord {
            before,
            after,
            accepted,
            status,
            evals,
        },
    )
}

/// One attribute step with indicators held fixed.
pub fn optimize_attributes<T: Real>(
    hyper: &HyperParams<T>,
    preds: &PredictionBundle<T>,
    y: &SceneLayout<T>,
    cfg: &OptimizeConfig,
) -> Result<(SceneLayout<T>, StepRecord<T>)> {
    check_inputs(hyper, preds, y)?;
    cfg.validate()?;
    Ok(attribute_step(hyper, preds, y, cfg))
}

/// One indicator step with attributes held fixed; output indicators lie in `z_bounds`.
pub fn optimize_indicators<T: Real>(
    hyper: &HyperParams<T>,
    preds: &PredictionBundle<T>,
    y: &SceneLayout<T>,
    cfg: &OptimizeConfig,
) -> Result<(SceneLayout<T>, StepRecord<T>)> {
    check_inputs(hyper, preds, y)?;
    cfg.validate()?;
    Ok(indicator_step(hyper, preds, y, cfg))
}

/// Alternates attribute and indicator steps from the predictions, then hardens.
pub fn synchronize<T: Real>(
    hyper: &HyperParams<T>,
    preds: &PredictionBundle<T>,
    cfg: &OptimizeConfig,
) -> Result<(SceneLayout<T>, OptimizeReport<T>)> {
    let (_, report) = synchronize_soft(hyper, preds, cfg)?;
    Ok((report.final_scene.clone(), report))
}

/// As [`synchronize`], also returning the soft scene before hardening.
pub fn synchronize_soft<T: Real>(
    hyper: &HyperParams<T>,
    preds: &PredictionBundle<T>,
    cfg: &OptimizeConfig,
) -> Result<(SceneLayout<T>, OptimizeReport<T>)> {
    let start = Instant::now();
    cfg.validate()?;
    let mut y = preds.node_preds.clone();
    let (lo, hi) = (T::lit(cfg.z_bounds[0]), T::lit(cfg.z_bounds[1]));
    for s in &mut y.slots {
        s.indicator = s.indicator.max(lo).min(hi);
    }
    check_inputs(hyper, preds, &y)?;
    let f0 = objective_f(hyper, preds, &y);
    if !f0.is_finite() {
        return Err(Error::Numerical(format!("objective is not finite at the predictions ({f0})")));
    }
    let mut objective = vec![f0];
    let mut attribute_steps = Vec::new();
    let mut indicator_steps = Vec::new();
    let mut stall = 0;
    let mut stopped_early = false;
    for it in 0..cfg.outer_iters {
        let (ya, ra) = attribute_step(hyper, preds, &y, cfg);
        let (yz, rz) = indicator_step(hyper, preds, &ya, cfg);
        y = yz;
        let prev = *objective.last().expect("nonempty");
        let cur = rz.after;
        log::debug!("outer {it}: f = {cur}");
        attribute_steps.push(ra);
        indicator_steps.push(rz);
        objective.push(cur);
        if (prev - cur).abs() < T::lit(STALL_TOL) {
            stall += 1;
            if stall >= STALL_ITERS {
                stopped_early = true;
                break;
            }
        } else {
            stall = 0;
        }
    }
    let line_search_failures = attribute_steps
        .iter()
        .chain(&indicator_steps)
        .filter(|r: &&StepRecord<T>| r.status == LbfgsStatus::LineSearchFailed)
        .count();
    if line_search_failures > 0 {
        log::info!("{line_search_failures} sub-steps ended with a failed line search");
    }
    let hard = y.hardened(T::lit(cfg.harden_threshold));
    let hardened_objective = objective_f(hyper, preds, &hard);
    let report = OptimizeReport {
        objective,
        attribute_steps,
        indicator_steps,
        hardened_objective,
        final_scene: hard,
        stopped_early,
        line_search_failures,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    Ok((y, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        OptimizeConfig::default().validate().unwrap();
        let bad = OptimizeConfig {
            outer_iters: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
