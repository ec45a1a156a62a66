//! Negative log-posterior `f(Φ, x, y)` and its gradients.
//!
//! `f` sums robust unary terms, robust pairwise terms, translation priors,
//! relative-translation priors with penetration masks, and count priors.
//! With edge gating every pairwise quantity is weighted by `z_v z_v'`.

use crate::error::{Error, Result};
use crate::priors::{count_prior_logpdf, penetration_depth_grad, unordered_pairs, PriorModel};
use crate::real::{wrap_angle, Real};
use crate::relative::{phi_and_jacobian, PoseCache, RelativeTensor, EDGE_DIM, E_ROTATION, E_TRANSLATION};
use crate::scene::{ClassTable, SceneLayout, ATTR_DIM, INDICATOR, NODE_DIM, ROTATION, SIZE, TRANSLATION};

/// Geman-McClure `ρ(x, α) = x² / (x² + α)`.
pub fn geman_mcclure<T: Real>(x: T, alpha: T) -> Result<T> {
    check_gm_args(x, alpha)?;
    Ok(gm_eval(x, alpha).0)
}

/// `∂ρ/∂x = 2xα / (x² + α)²`.
pub fn geman_mcclure_derivative<T: Real>(x: T, alpha: T) -> Result<T> {
    check_gm_args(x, alpha)?;
    Ok(gm_eval(x, alpha).1)
}

fn check_gm_args<T: Real>(x: T, alpha: T) -> Result<()> {
    if !(alpha > T::zero()) {
        return Err(Error::InvalidParameter(format!("robust scale must be positive, got {alpha}")));
    }
    if !(x >= T::zero()) {
        return Err(Error::InvalidParameter(format!("robust argument must be non-negative, got {x}")));
    }
    Ok(())
}

/// How the quadratic form `m = xᵀΣ⁻¹x` enters the robust function.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RobustForm {
    /// `ρ(√m, α) = m / (m + α)`: quadratic in the residual near zero.
    #[default]
    Distance,
    /// `ρ(m, α) = m² / (m² + α)`: quartic in the residual near zero.
    Quadratic,
}

impl RobustForm {
    /// `(ρ, ∂ρ/∂m, ∂ρ/∂α)` as a function of the quadratic form `m`.
    #[inline]
    pub fn eval<T: Real>(self, m: T, alpha: T) -> (T, T, T) {
        match self {
            RobustForm::Quadratic => gm_eval(m, alpha),
            RobustForm::Distance => {
                let den = m + alpha;
                (m / den, alpha / (den * den), -m / (den * den))
            }
        }
    }
}

/// `(ρ, ∂ρ/∂x, ∂ρ/∂α)`.
#[inline]
fn gm_eval<T: Real>(x: T, alpha: T) -> (T, T, T) {
    let x2 = x * x;
    let den = x2 + alpha;
    let den2 = den * den;
    (x2 / den, T::lit(2.0) * x * alpha / den2, -x2 / den2)
}

/// Diagonal quadratic form `Σ x_i² · inv_var_i`.
pub fn mahalanobis<T: Real>(x: &[T], inv_var: &[T]) -> Result<T> {
    if x.len() != inv_var.len() {
        return Err(Error::LengthMismatch(format!("{} residuals vs {} weights", x.len(), inv_var.len())));
    }
    Ok(x.iter().zip(inv_var).map(|(&r, &w)| r * r * w).sum())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RobustClass<T> {
    pub alpha: T,
    /// Variances of the 13 node channels (attributes then indicator).
    pub variances: [T; NODE_DIM],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RobustPair<T> {
    pub alpha: T,
    pub variances: [T; EDGE_DIM],
}

/// `α_c, Σ_c` per class and `α_(c,c'), Σ_(c,c')` per ordered class pair.
#[derive(Clone, Debug, PartialEq)]
pub struct RobustParams<T> {
    pub classes: Vec<RobustClass<T>>,
    pub pairs: Vec<RobustPair<T>>,
}

const CLASS_BLOCK: usize = 1 + NODE_DIM;
const PAIR_BLOCK: usize = 1 + EDGE_DIM;

impl<T: Real> RobustParams<T> {
    pub fn uniform(table: &ClassTable, node: RobustClass<T>, edge: RobustPair<T>) -> Self {
        Self {
            classes: vec![node; table.num_classes()],
            pairs: vec![edge; table.num_pairs()],
        }
    }

    pub fn validate(&self, table: &ClassTable) -> Result<()> {
        if self.classes.len() != table.num_classes() || self.pairs.len() != table.num_pairs() {
            return Err(Error::Schema("robust parameters do not match the class table".into()));
        }
        let ok = |a: T, v: &[T]| a > T::zero() && a.is_finite() && v.iter().all(|&x| x > T::zero() && x.is_finite());
        if !self.classes.iter().all(|c| ok(c.alpha, &c.variances)) || !self.pairs.iter().all(|p| ok(p.alpha, &p.variances)) {
            return Err(Error::InvalidParameter("robust scales and variances must be positive".into()));
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.classes.len() * CLASS_BLOCK + self.pairs.len() * PAIR_BLOCK
    }

    /// Log-space parameters: `[ln α, ln σ²…]` per class, then per pair.
    pub fn pack(&self, out: &mut Vec<T>) {
        for c in &self.classes {
            out.push(c.alpha.ln());
            out.extend(c.variances.iter().map(|v| v.ln()));
        }
        for p in &self.pairs {
            out.push(p.alpha.ln());
            out.extend(p.variances.iter().map(|v| v.ln()));
        }
    }

    pub fn unpack<'a>(&mut self, mut src: &'a [T]) -> &'a [T] {
        for c in &mut self.classes {
            c.alpha = src[0].exp();
            for (k, v) in c.variances.iter_mut().enumerate() {
                *v = src[1 + k].exp();
            }
            src = &src[CLASS_BLOCK..];
        }
        for p in &mut self.pairs {
            p.alpha = src[0].exp();
            for (k, v) in p.variances.iter_mut().enumerate() {
                *v = src[1 + k].exp();
            }
            src = &src[PAIR_BLOCK..];
        }
        src
    }

    pub fn cast<U: Real>(&self) -> RobustParams<U> {
        let c = |x: T| U::from(x).expect("castable scalar");
        RobustParams {
            classes: self
                .classes
                .iter()
                .map(|r| RobustClass {
                    alpha: c(r.alpha),
                    variances: r.variances.map(c),
                })
                .collect(),
            pairs: self
                .pairs
                .iter()
                .map(|r| RobustPair {
                    alpha: c(r.alpha),
                    variances: r.variances.map(c),
                })
                .collect(),
        }
    }
}

/// Φ: robust parameters, priors, and the edge-gating switch.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperParams<T> {
    pub robust: RobustParams<T>,
    pub prior: PriorModel<T>,
    pub edge_gating: bool,
    pub form: RobustForm,
}

/// Default robust scale for unary and pairwise terms.
pub const DEFAULT_ALPHA: f64 = 100.0;

impl<T: Real> HyperParams<T> {
    /// Robust parameters with fixed default variances around the given prior.
    pub fn with_defaults(prior: PriorModel<T>) -> Self {
        let l = T::lit;
        let mut nv = [l(0.01); NODE_DIM];
        for k in 0..3 {
            nv[TRANSLATION + k] = l(0.04);
        }
        nv[INDICATOR] = l(0.25);
        let mut ev = [l(0.01); EDGE_DIM];
        for k in 0..3 {
            ev[E_TRANSLATION + k] = l(0.04);
        }
        let robust = RobustParams::uniform(
            &prior.class_table,
            RobustClass {
                alpha: l(DEFAULT_ALPHA),
                variances: nv,
            },
            RobustPair {
                alpha: l(DEFAULT_ALPHA),
                variances: ev,
            },
        );
        Self {
            robust,
            prior,
            edge_gating: true,
            form: RobustForm::default(),
        }
    }

    pub fn class_table(&self) -> &ClassTable {
        &self.prior.class_table
    }

    pub fn validate(&self) -> Result<()> {
        self.robust.validate(&self.prior.class_table)?;
        self.prior.validate()
    }

    pub fn n_params(&self) -> usize {
        self.robust.n_params() + self.prior.n_params()
    }

    pub fn pack(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.n_params());
        self.robust.pack(&mut out);
        self.prior.pack(&mut out);
        out
    }

    pub fn unpack(&mut self, src: &[T]) {
        let rest = self.robust.unpack(src);
        let rest = self.prior.unpack(rest);
        debug_assert!(rest.is_empty());
    }

    pub fn cast<U: Real>(&self) -> HyperParams<U> {
        HyperParams {
            robust: self.robust.cast(),
            prior: self.prior.cast(),
            edge_gating: self.edge_gating,
            form: self.form,
        }
    }
}

/// Noisy node and edge predictions fed to synchronization.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionBundle<T> {
    pub node_preds: SceneLayout<T>,
    pub edge_preds: RelativeTensor<T>,
}

impl<T: Real> PredictionBundle<T> {
    pub fn validate(&self) -> Result<()> {
        if self.edge_preds.size() != self.node_preds.len() {
            return Err(Error::Schema(format!(
                "edge tensor covers {} slots, scene has {}",
                self.edge_preds.size(),
                self.node_preds.len()
            )));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> PredictionBundle<U> {
        PredictionBundle {
            node_preds: self.node_preds.cast(),
            edge_preds: self.edge_preds.cast(),
        }
    }
}

/// Which derivatives [`evaluate`] should produce.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Want {
    pub attrs: bool,
    pub indicators: bool,
    pub hyper: bool,
}

/// Contribution of each term family to `f`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Terms<T> {
    pub unary: T,
    pub pairwise: T,
    pub translation_prior: T,
    pub relative_prior: T,
    pub penetration: T,
    pub count_prior: T,
}

impl<T: Real> Terms<T> {
    pub fn likelihood(&self) -> T {
        self.unary + self.pairwise
    }
    pub fn total(&self) -> T {
        self.unary + self.pairwise + self.translation_prior + self.relative_prior + self.penetration + self.count_prior
    }
}

#[derive(Clone, Debug)]
pub struct Evaluation<T> {
    pub value: T,
    pub terms: Terms<T>,
    /// `∂f/∂a_v` per slot (empty unless requested).
    pub attr_grad: Vec<[T; ATTR_DIM]>,
    /// `∂f/∂z_v` per slot (empty unless requested).
    pub indicator_grad: Vec<T>,
    /// `∂f/∂Φ` in the packed layout of [`HyperParams::pack`] (empty unless requested).
    pub hyper_grad: Vec<T>,
    /// Number of edges whose Jacobian fell back to finite differences.
    pub fd_fallbacks: usize,
}

fn node_residual<T: Real>(pred: &SceneLayout<T>, y: &SceneLayout<T>, v: usize) -> [T; NODE_DIM] {
    let p = pred.slots[v].attrs.to_array();
    let a = y.slots[v].attrs.to_array();
    let mut r = [T::zero(); NODE_DIM];
    for k in 0..ATTR_DIM {
        r[k] = p[k] - a[k];
    }
    for k in ROTATION..ROTATION + 3 {
        r[k] = wrap_angle(r[k]);
    }
    r[INDICATOR] = pred.slots[v].indicator - y.slots[v].indicator;
    r
}

/// Evaluates `f(Φ, x, y)` and the requested gradients.
pub fn evaluate<T: Real>(hyper: &HyperParams<T>, preds: &PredictionBundle<T>, y: &SceneLayout<T>, want: Want) -> Evaluation<T> {
    let table = &hyper.prior.class_table;
    let n = y.len();
    let prior = &hyper.prior;
    let half = T::lit(0.5);
    let mut terms = Terms::default();
    let mut attr_grad = if want.attrs { vec![[T::zero(); ATTR_DIM]; n] } else { Vec::new() };
    let mut z_grad = if want.indicators { vec![T::zero(); n] } else { Vec::new() };
    let mut hyper_grad = if want.hyper { vec![T::zero(); hyper.n_params()] } else { Vec::new() };
    let nc = table.num_classes();
    let prior_off = nc * CLASS_BLOCK + table.num_pairs() * PAIR_BLOCK;
    let layout = if want.hyper { Some(prior.layout()) } else { None };
    let mut fd_fallbacks = 0;

    // unary robust terms and absolute translation priors
    for v in 0..n {
        let c = table.class_of(v);
        let rp = &hyper.robust.classes[c];
        let res = node_residual(&preds.node_preds, y, v);
        let m: T = (0..NODE_DIM).map(|k| res[k] * res[k] / rp.variances[k]).sum();
        let (rho, drho, dalpha) = hyper.form.eval(m, rp.alpha);
        terms.unary += half * rho;
        if want.attrs {
            for k in 0..ATTR_DIM {
                attr_grad[v][k] -= drho * res[k] / rp.variances[k];
            }
        }
        if want.indicators {
            z_grad[v] -= drho * res[INDICATOR] / rp.variances[INDICATOR];
        }
        if want.hyper {
            let o = c * CLASS_BLOCK;
            hyper_grad[o] += half * dalpha * rp.alpha;
            for k in 0..NODE_DIM {
                hyper_grad[o + 1 + k] -= half * drho * res[k] * res[k] / rp.variances[k];
            }
        }

        if let Some(axes) = &prior.translation[c] {
            let z = y.slots[v].indicator;
            for k in 0..3 {
                let t = y.slots[v].attrs.translation[k];
                let (lp, dlp) = axes[k].logpdf_and_grad(t);
                terms.translation_prior -= z * lp;
                if want.attrs {
                    attr_grad[v][TRANSLATION + k] -= z * dlp;
                }
                if want.indicators {
                    z_grad[v] -= lp;
                }
                if let Some(l) = &layout {
                    let o = prior_off + l.translation[c].expect("layout")[k];
                    axes[k].accumulate_logpdf_param_grad(t, -z, &mut hyper_grad[o..o + axes[k].n_params()]);
                }
            }
        }
    }

    // pairwise terms
    let caches: Vec<PoseCache<T>> = y.slots.iter().map(|s| PoseCache::new(&s.attrs)).collect();
    for v in 0..n {
        for w in 0..n {
            if v == w {
                continue;
            }
            let (zv, zw) = (y.slots[v].indicator, y.slots[w].indicator);
            let weight = if hyper.edge_gating { zv * zw } else { T::one() };
            let need_value = weight != T::zero();
            let need_zgrad = want.indicators && hyper.edge_gating && (zv != T::zero() || zw != T::zero());
            if !need_value && !need_zgrad {
                continue;
            }
            let (cv, cw) = (table.class_of(v), table.class_of(w));
            let p = table.pair_index(cv, cw);
            let rp = &hyper.robust.pairs[p];
            let (av, aw) = (&y.slots[v].attrs, &y.slots[w].attrs);
            let (e, jac) = phi_and_jacobian(av, &caches[v], aw, &caches[w]);
            if jac.used_finite_differences {
                fd_fallbacks += 1;
            }
            let ea = e.to_array();
            let pred = preds.edge_preds.get(v, w);
            let mut res = [T::zero(); EDGE_DIM];
            for k in 0..EDGE_DIM {
                res[k] = pred[k] - ea[k];
            }
            for k in E_ROTATION..E_ROTATION + 3 {
                res[k] = wrap_angle(res[k]);
            }
            let m: T = (0..EDGE_DIM).map(|k| res[k] * res[k] / rp.variances[k]).sum();
            let (rho, drho, dalpha) = hyper.form.eval(m, rp.alpha);
            let robust_term = half * rho;

            // ∂(term)/∂φ, accumulated over robust and prior parts
            let mut dphi = [T::zero(); EDGE_DIM];
            for k in 0..EDGE_DIM {
                dphi[k] = -drho * res[k] / rp.variances[k];
            }
            let mut rel_term = T::zero();
            if let Some(axes) = &prior.relative[p] {
                for k in 0..3 {
                    let (lp, dlp) = axes[k].logpdf_and_grad(ea[E_TRANSLATION + k]);
                    rel_term -= lp;
                    dphi[E_TRANSLATION + k] -= dlp;
                }
            }
            let (depth, dgrad) = if prior.mask_enabled[p] {
                penetration_depth_grad(av, aw)
            } else {
                (T::zero(), [[T::zero(); 3]; 4])
            };

            terms.pairwise += weight * robust_term;
            terms.relative_prior += weight * rel_term;
            terms.penetration += weight * depth;

            if want.attrs && need_value {
                for (k, &g) in dphi.iter().enumerate() {
                    if g == T::zero() {
                        continue;
                    }
                    let row = &jac.rows[k];
                    for col in 0..ATTR_DIM {
                        attr_grad[v][col] += weight * g * row[col];
                        attr_grad[w][col] += weight * g * row[ATTR_DIM + col];
                    }
                }
                for i in 0..3 {
                    attr_grad[v][SIZE + i] += weight * dgrad[0][i];
                    attr_grad[w][SIZE + i] += weight * dgrad[1][i];
                    attr_grad[v][TRANSLATION + i] += weight * dgrad[2][i];
                    attr_grad[w][TRANSLATION + i] += weight * dgrad[3][i];
                }
            }
            if need_zgrad {
                let total = robust_term + rel_term + depth;
                z_grad[v] += zw * total;
                z_grad[w] += zv * total;
            }
            if want.hyper && need_value {
                let o = nc * CLASS_BLOCK + p * PAIR_BLOCK;
                hyper_grad[o] += weight * half * dalpha * rp.alpha;
                for k in 0..EDGE_DIM {
                    hyper_grad[o + 1 + k] -= weight * half * drho * res[k] * res[k] / rp.variances[k];
                }
                if let (Some(axes), Some(l)) = (&prior.relative[p], &layout) {
                    let offs = l.relative[p].expect("layout");
                    for k in 0..3 {
                        let o = prior_off + offs[k];
                        axes[k].accumulate_logpdf_param_grad(
                            ea[E_TRANSLATION + k],
                            -weight,
                            &mut hyper_grad[o..o + axes[k].n_params()],
                        );
                    }
                }
            }
        }
    }

    // count priors
    let counts: Vec<T> = (0..nc).map(|c| y.count_of(c)).collect();
    let (cval, cgrad) = count_prior_logpdf(&prior.counts, &counts);
    terms.count_prior = -cval;
    if want.indicators {
        for (v, g) in z_grad.iter_mut().enumerate() {
            *g -= cgrad[table.class_of(v)];
        }
    }
    if let Some(l) = &layout {
        for (c, m) in prior.counts.class_mixtures.iter().enumerate() {
            if let Some(g) = m {
                let o = prior_off + l.count_class[c].expect("layout");
                g.accumulate_logpdf_param_grad(counts[c], -T::one(), &mut hyper_grad[o..o + g.n_params()]);
            }
        }
        for (q, (a, b)) in unordered_pairs(nc).into_iter().enumerate() {
            if let Some(g) = &prior.counts.pair_mixtures[q] {
                let o = prior_off + l.count_pair[q].expect("layout");
                g.accumulate_logpdf_param_grad([counts[a], counts[b]], -T::one(), &mut hyper_grad[o..o + g.n_params()]);
            }
        }
    }

    Evaluation {
        value: terms.total(),
        terms,
        attr_grad,
        indicator_grad: z_grad,
        hyper_grad,
        fd_fallbacks,
    }
}

/// `f(Φ, x, y)`.
pub fn objective_f<T: Real>(hyper: &HyperParams<T>, preds: &PredictionBundle<T>, y: &SceneLayout<T>) -> T {
    evaluate(hyper, preds, y, Want::default()).value
}

/// `∂f/∂a_v` for every slot.
pub fn objective_grad_attrs<T: Real>(hyper: &HyperParams<T>, preds: &PredictionBundle<T>, y: &SceneLayout<T>) -> Vec<[T; ATTR_DIM]> {
    let ev = evaluate(hyper, preds, y, Want { attrs: true, ..Default::default() });
    if ev.fd_fallbacks > 0 {
        log::warn!("{} edge Jacobians used finite differences near gimbal lock", ev.fd_fallbacks);
    }
    ev.attr_grad
}

/// `∂f/∂z_v` for every slot.
pub fn objective_grad_indicators<T: Real>(hyper: &HyperParams<T>, preds: &PredictionBundle<T>, y: &SceneLayout<T>) -> Vec<T> {
    evaluate(hyper, preds, y, Want { indicators: true, ..Default::default() }).indicator_grad
}

/// `∂f/∂Φ` in packed layout.
pub fn objective_grad_hyper<T: Real>(hyper: &HyperParams<T>, preds: &PredictionBundle<T>, y: &SceneLayout<T>) -> Vec<T> {
    evaluate(hyper, preds, y, Want { hyper: true, ..Default::default() }).hyper_grad
}
