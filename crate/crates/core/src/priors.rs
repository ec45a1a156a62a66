//! Prior distributions over translations, relative translations and object counts.
//!
//! Absolute translations get one 1D mixture per axis and class; relative
//! translations get one 1D mixture per axis and ordered class pair, times a
//! penetration mask; counts get a 1D mixture per class and a 2D mixture per
//! unordered class pair, fitted by least squares to the empirical count pmfs.

use crate::error::{Error, Result};
use crate::gmm::{fit_gmm1_em, Component1, Component2, Gmm1, Gmm2};
use crate::lbfgs::{minimize, LbfgsConfig};
use crate::real::Real;
use crate::relative::phi;
use crate::scene::{ClassTable, ObjectAttributes, SceneLayout};

pub const TRANSLATION_K: usize = 6;
pub const RELATIVE_K: usize = 8;
pub const COUNT_K: usize = 2;
pub const COUNT_PAIR_K: usize = 4;
/// Lower bound on count-mixture variances after least-squares fitting.
pub const COUNT_VAR_FLOOR: f64 = 0.02;

/// Per-axis translation mixtures of one class.
pub type AxisMixtures<T> = [Gmm1<T>; 3];

/// Unordered class pairs `(a, b)` with `a < b`, in lexicographic order.
pub fn unordered_pairs(num_classes: usize) -> Vec<(usize, usize)> {
    (0..num_classes)
        .flat_map(|a| (a + 1..num_classes).map(move |b| (a, b)))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CountPrior<T> {
    /// `M_{γ_c}` per class.
    pub class_mixtures: Vec<Option<Gmm1<T>>>,
    /// `M_{γ_(c,c')}` per unordered pair, indexed like [`unordered_pairs`].
    pub pair_mixtures: Vec<Option<Gmm2<T>>>,
    /// `p_c(i)` for `i = 0..=N_c`.
    pub class_tables: Vec<Vec<T>>,
    /// `p_(c,c')(i, j)` row-major over `(N_c + 1) × (N_c' + 1)`.
    pub pair_tables: Vec<Vec<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PriorModel<T> {
    pub class_table: ClassTable,
    /// `M_{μ_c}`; `None` means no translation prior for the class.
    pub translation: Vec<Option<AxisMixtures<T>>>,
    /// `M_{μ_(c,c')}` per ordered pair (`ClassTable::pair_index`).
    pub relative: Vec<Option<AxisMixtures<T>>>,
    /// Whether the penetration mask applies to an ordered pair.
    pub mask_enabled: Vec<bool>,
    pub counts: CountPrior<T>,
}

impl<T: Real> PriorModel<T> {
    /// A prior with no terms at all.
    pub fn flat(class_table: ClassTable) -> Self {
        let nc = class_table.num_classes();
        let np = unordered_pairs(nc).len();
        Self {
            translation: vec![None; nc],
            relative: vec![None; nc * nc],
            mask_enabled: vec![false; nc * nc],
            counts: CountPrior {
                class_mixtures: vec![None; nc],
                pair_mixtures: vec![None; np],
                class_tables: (0..nc).map(|c| vec![T::zero(); class_table.slots_of(c) + 1]).collect(),
                pair_tables: unordered_pairs(nc)
                    .iter()
                    .map(|&(a, b)| vec![T::zero(); (class_table.slots_of(a) + 1) * (class_table.slots_of(b) + 1)])
                    .collect(),
            },
            class_table,
        }
    }

    pub fn n_params(&self) -> usize {
        let axes = |m: &Option<AxisMixtures<T>>| m.as_ref().map_or(0, |a| a.iter().map(Gmm1::n_params).sum());
        self.translation.iter().map(axes).sum::<usize>()
            + self.relative.iter().map(axes).sum::<usize>()
            + self.counts.class_mixtures.iter().flatten().map(Gmm1::n_params).sum::<usize>()
            + self.counts.pair_mixtures.iter().flatten().map(Gmm2::n_params).sum::<usize>()
    }

    /// Offsets of each mixture block inside the packed parameter vector.
    pub fn layout(&self) -> PriorLayout {
        let mut off = 0;
        let mut axes_offsets = |ms: &[Option<AxisMixtures<T>>]| -> Vec<Option<[usize; 3]>> {
            ms.iter()
                .map(|m| {
                    m.as_ref().map(|a| {
                        let mut o = [0; 3];
                        for (k, g) in a.iter().enumerate() {
                            o[k] = off;
                            off += g.n_params();
                        }
                        o
                    })
                })
                .collect()
        };
        let translation = axes_offsets(&self.translation);
        let relative = axes_offsets(&self.relative);
        let count_class = self
            .counts
            .class_mixtures
            .iter()
            .map(|m| {
                m.as_ref().map(|g| {
                    let o = off;
                    off += g.n_params();
                    o
                })
            })
            .collect();
        let count_pair = self
            .counts
            .pair_mixtures
            .iter()
            .map(|m| {
                m.as_ref().map(|g| {
                    let o = off;
                    off += g.n_params();
                    o
                })
            })
            .collect();
        PriorLayout {
            translation,
            relative,
            count_class,
            count_pair,
            len: off,
        }
    }

    pub fn pack(&self, out: &mut Vec<T>) {
        for a in self.translation.iter().chain(&self.relative).flatten() {
            a.iter().for_each(|g| g.pack(out));
        }
        self.counts.class_mixtures.iter().flatten().for_each(|g| g.pack(out));
        self.counts.pair_mixtures.iter().flatten().for_each(|g| g.pack(out));
    }

    /// Inverse of [`pack`](Self::pack); count variances are floored.
    pub fn unpack<'a>(&mut self, mut src: &'a [T]) -> &'a [T] {
        for a in self.translation.iter_mut().chain(self.relative.iter_mut()).flatten() {
            for g in a.iter_mut() {
                src = g.unpack(src);
            }
        }
        let floor = T::lit(COUNT_VAR_FLOOR);
        for g in self.counts.class_mixtures.iter_mut().flatten() {
            src = g.unpack(src);
            for c in &mut g.components {
                c.var = c.var.max(floor);
            }
        }
        for g in self.counts.pair_mixtures.iter_mut().flatten() {
            src = g.unpack(src);
            for c in &mut g.components {
                c.cov[0][0] = c.cov[0][0].max(floor);
                c.cov[1][1] = c.cov[1][1].max(floor);
            }
        }
        src
    }

    pub fn validate(&self) -> Result<()> {
        let nc = self.class_table.num_classes();
        if self.translation.len() != nc
            || self.relative.len() != nc * nc
            || self.mask_enabled.len() != nc * nc
            || self.counts.class_mixtures.len() != nc
            || self.counts.pair_mixtures.len() != unordered_pairs(nc).len()
        {
            return Err(Error::Schema("prior model does not match its class table".into()));
        }
        for a in self.translation.iter().chain(&self.relative).flatten() {
            for g in a {
                g.validate()?;
            }
        }
        for g in self.counts.class_mixtures.iter().flatten() {
            g.validate()?;
        }
        for g in self.counts.pair_mixtures.iter().flatten() {
            g.validate()?;
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> PriorModel<U> {
        let axes = |m: &Option<AxisMixtures<T>>| m.as_ref().map(|a| [a[0].cast(), a[1].cast(), a[2].cast()]);
        let tables = |t: &Vec<Vec<T>>| -> Vec<Vec<U>> {
            t.iter()
                .map(|r| r.iter().map(|&x| U::from(x).expect("castable scalar")).collect())
                .collect()
        };
        PriorModel {
            class_table: self.class_table.clone(),
            translation: self.translation.iter().map(axes).collect(),
            relative: self.relative.iter().map(axes).collect(),
            mask_enabled: self.mask_enabled.clone(),
            counts: CountPrior {
                class_mixtures: self.counts.class_mixtures.iter().map(|m| m.as_ref().map(Gmm1::cast)).collect(),
                pair_mixtures: self.counts.pair_mixtures.iter().map(|m| m.as_ref().map(Gmm2::cast)).collect(),
                class_tables: tables(&self.counts.class_tables),
                pair_tables: tables(&self.counts.pair_tables),
            },
        }
    }
}

/// Offsets into the packed prior-parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PriorLayout {
    pub translation: Vec<Option<[usize; 3]>>,
    pub relative: Vec<Option<[usize; 3]>>,
    pub count_class: Vec<Option<usize>>,
    pub count_pair: Vec<Option<usize>>,
    pub len: usize,
}

/// Penetration depth of two axis-aligned boxes: the smallest per-axis overlap
/// (zero when the boxes are disjoint). Rotations are ignored.
pub fn penetration_depth<T: Real>(a: &ObjectAttributes<T>, b: &ObjectAttributes<T>) -> (T, Option<usize>) {
    let half = T::lit(0.5);
    let mut best = T::infinity();
    let mut axis = 0;
    for i in 0..3 {
        let d = (half * (a.size[i] + b.size[i]) - (b.translation[i] - a.translation[i]).abs()).max(T::zero());
        if d < best {
            best = d;
            axis = i;
        }
    }
    if best > T::zero() {
        (best, Some(axis))
    } else {
        (T::zero(), None)
    }
}

/// `I_(c,c')`: `exp(−depth)` unless the pair may interpenetrate.
pub fn penetration_mask<T: Real>(a: &ObjectAttributes<T>, b: &ObjectAttributes<T>, allowed: bool) -> T {
    if allowed {
        T::one()
    } else {
        (-penetration_depth(a, b).0).exp()
    }
}

/// Gradient of the penetration depth: `(∂/∂s_a, ∂/∂s_b, ∂/∂t_a, ∂/∂t_b)`.
pub fn penetration_depth_grad<T: Real>(
    a: &ObjectAttributes<T>,
    b: &ObjectAttributes<T>,
) -> (T, [[T; 3]; 4]) {
    let mut g = [[T::zero(); 3]; 4];
    let (d, axis) = penetration_depth(a, b);
    if let Some(i) = axis {
        let half = T::lit(0.5);
        let delta = b.translation[i] - a.translation[i];
        let sgn = if delta > T::zero() {
            T::one()
        } else if delta < T::zero() {
            -T::one()
        } else {
            T::zero()
        };
        g[0][i] = half;
        g[1][i] = half;
        g[2][i] = sgn;
        g[3][i] = -sgn;
    }
    (d, g)
}

/// Sum of count log-densities for relaxed per-class counts, and its gradient
/// with respect to each class count.
pub fn count_prior_logpdf<T: Real>(prior: &CountPrior<T>, counts: &[T]) -> (T, Vec<T>) {
    let mut value = T::zero();
    let mut grad = vec![T::zero(); counts.len()];
    for (c, m) in prior.class_mixtures.iter().enumerate() {
        if let Some(g) = m {
            let (v, d) = g.logpdf_and_grad(counts[c]);
            value += v;
            grad[c] += d;
        }
    }
    for (q, (a, b)) in unordered_pairs(counts.len()).into_iter().enumerate() {
        if let Some(g) = &prior.pair_mixtures[q] {
            let (v, d) = g.logpdf_and_grad([counts[a], counts[b]]);
            value += v;
            grad[a] += d[0];
            grad[b] += d[1];
        }
    }
    (value, grad)
}

/// [`count_prior_logpdf`] with the gradient pulled back to every slot indicator.
pub fn count_prior_logpdf_indicators<T: Real>(prior: &CountPrior<T>, scene: &SceneLayout<T>) -> (T, Vec<T>) {
    let t = &scene.class_table;
    let counts: Vec<T> = (0..t.num_classes()).map(|c| scene.count_of(c)).collect();
    let (v, gc) = count_prior_logpdf(prior, &counts);
    (v, (0..scene.len()).map(|g| gc[t.class_of(g)]).collect())
}

/// Training statistics that the regularizer consumes.
#[derive(Clone, Debug)]
pub struct TrainingStats<T> {
    pub class_table: ClassTable,
    /// Active translations per class and axis.
    pub translations: Vec<[Vec<T>; 3]>,
    /// Relative translations of active ordered pairs per class pair and axis.
    pub relative_translations: Vec<[Vec<T>; 3]>,
    pub class_tables: Vec<Vec<T>>,
    pub pair_tables: Vec<Vec<T>>,
    pub n_scenes: usize,
}

impl<T: Real> TrainingStats<T> {
    pub fn from_scenes(scenes: &[SceneLayout<T>]) -> Result<Self> {
        let first = scenes.first().ok_or_else(|| Error::Degenerate("empty scene list".into()))?;
        let table = first.class_table.clone();
        let nc = table.num_classes();
        let mut translations: Vec<[Vec<T>; 3]> = vec![Default::default(); nc];
        let mut relative: Vec<[Vec<T>; 3]> = vec![Default::default(); nc * nc];
        let mut class_counts: Vec<Vec<usize>> = (0..nc).map(|c| vec![0; table.slots_of(c) + 1]).collect();
        let pairs = unordered_pairs(nc);
        let mut pair_counts: Vec<Vec<usize>> = pairs
            .iter()
            .map(|&(a, b)| vec![0; (table.slots_of(a) + 1) * (table.slots_of(b) + 1)])
            .collect();

        for s in scenes {
            if s.class_table != table {
                return Err(Error::Schema("scenes use different class tables".into()));
            }
            let active: Vec<usize> = s.active_slots().collect();
            for &v in &active {
                let c = table.class_of(v);
                for k in 0..3 {
                    translations[c][k].push(s.slots[v].attrs.translation[k]);
                }
            }
            for &v in &active {
                for &w in &active {
                    if v == w {
                        continue;
                    }
                    let e = phi(&s.slots[v].attrs, &s.slots[w].attrs);
                    let p = table.pair_index(table.class_of(v), table.class_of(w));
                    for k in 0..3 {
                        relative[p][k].push(e.rel_translation[k]);
                    }
                }
            }
            let n: Vec<usize> = (0..nc).map(|c| s.active_slots().filter(|&g| table.class_of(g) == c).count()).collect();
            for c in 0..nc {
                class_counts[c][n[c]] += 1;
            }
            for (q, &(a, b)) in pairs.iter().enumerate() {
                pair_counts[q][n[a] * (table.slots_of(b) + 1) + n[b]] += 1;
            }
        }
        let ns = T::from_usize(scenes.len()).expect("scene count");
        let norm = |v: Vec<Vec<usize>>| -> Vec<Vec<T>> {
            v.into_iter()
                .map(|r| r.into_iter().map(|x| T::from_usize(x).expect("count") / ns).collect())
                .collect()
        };
        Ok(Self {
            class_table: table,
            translations,
            relative_translations: relative,
            class_tables: norm(class_counts),
            pair_tables: norm(pair_counts),
            n_scenes: scenes.len(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorFitConfig {
    pub seed: u64,
    pub translation_k: usize,
    pub relative_k: usize,
    pub count_k: usize,
    pub count_pair_k: usize,
    /// Ordered class pairs (by name) whose objects may interpenetrate.
    pub penetration_allowed: Vec<(String, String)>,
}

impl Default for PriorFitConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            translation_k: TRANSLATION_K,
            relative_k: RELATIVE_K,
            count_k: COUNT_K,
            count_pair_k: COUNT_PAIR_K,
            penetration_allowed: Vec::new(),
        }
    }
}

fn distinct_count<T: Real>(xs: &[T]) -> usize {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    v.dedup();
    v.len()
}

fn fit_axis<T: Real>(xs: &[T], k: usize, seed: u64) -> Result<Gmm1<T>> {
    if xs.is_empty() {
        return Ok(Gmm1::wide());
    }
    let k = k.min(distinct_count(xs)).max(1);
    Ok(fit_gmm1_em(xs, k, seed)?.gmm)
}

/// Least-squares fit of a 1D mixture to a pmf over `0..table.len()`.
pub fn fit_count_mixture_1d<T: Real>(table: &[T], k: usize) -> Gmm1<T> {
    let mut order: Vec<usize> = (0..table.len()).collect();
    order.sort_by(|&a, &b| table[b].partial_cmp(&table[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    let k = k.max(1);
    let init: Vec<Component1<T>> = (0..k)
        .map(|j| {
            let cell = order[j % order.len()];
            let shift = T::lit(0.25) * T::from_usize(j / order.len()).expect("index");
            Component1 {
                weight: table[cell] + T::lit(0.05),
                mean: T::from_usize(cell).expect("index") + shift,
                var: T::lit(0.16),
            }
        })
        .collect();
    let total: T = init.iter().map(|c| c.weight).sum();
    let mut g = Gmm1 {
        components: init.into_iter().map(|c| Component1 { weight: c.weight / total, ..c }).collect(),
    };
    let mut x0 = Vec::new();
    g.pack(&mut x0);
    let template = g.clone();
    let res = minimize(
        |x: &[T], grad: &mut [T]| {
            let mut m = template.clone();
            m.unpack(x);
            grad.iter_mut().for_each(|v| *v = T::zero());
            let mut loss = T::zero();
            for (i, &p) in table.iter().enumerate() {
                let xi = T::from_usize(i).expect("index");
                let r = m.pdf(xi) - p;
                loss += r * r;
                m.accumulate_pdf_param_grad(xi, T::lit(2.0) * r, grad);
            }
            loss
        },
        &x0,
        &LbfgsConfig {
            max_evals: 2000,
            grad_tol: 1e-12,
            f_tol: 1e-15,
            ..Default::default()
        },
    );
    g.unpack(&res.x);
    for c in &mut g.components {
        c.var = c.var.max(T::lit(COUNT_VAR_FLOOR));
    }
    g
}

/// Least-squares fit of a 2D mixture to a pmf over a `rows × cols` grid.
pub fn fit_count_mixture_2d<T: Real>(table: &[T], rows: usize, cols: usize, k: usize) -> Gmm2<T> {
    let mut order: Vec<usize> = (0..table.len()).collect();
    order.sort_by(|&a, &b| table[b].partial_cmp(&table[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    let k = k.max(1);
    let v0 = T::lit(0.16);
    let init: Vec<Component2<T>> = (0..k)
        .map(|j| {
            let cell = order[j % order.len()];
            let shift = T::lit(0.25) * T::from_usize(j / order.len()).expect("index");
            Component2 {
                weight: table[cell] + T::lit(0.05),
                mean: [
                    T::from_usize(cell / cols).expect("index") + shift,
                    T::from_usize(cell % cols).expect("index") + shift,
                ],
                cov: [[v0, T::zero()], [T::zero(), v0]],
            }
        })
        .collect();
    let total: T = init.iter().map(|c| c.weight).sum();
    let mut g = Gmm2 {
        components: init.into_iter().map(|c| Component2 { weight: c.weight / total, ..c }).collect(),
    };
    let mut x0 = Vec::new();
    g.pack(&mut x0);
    let template = g.clone();
    let res = minimize(
        |x: &[T], grad: &mut [T]| {
            let mut m = template.clone();
            m.unpack(x);
            grad.iter_mut().for_each(|v| *v = T::zero());
            let mut loss = T::zero();
            for i in 0..rows {
                for j in 0..cols {
                    let p = table[i * cols + j];
                    let xy = [T::from_usize(i).expect("index"), T::from_usize(j).expect("index")];
                    let r = m.pdf(xy) - p;
                    loss += r * r;
                    m.accumulate_pdf_param_grad(xy, T::lit(2.0) * r, grad);
                }
            }
            loss
        },
        &x0,
        &LbfgsConfig {
            max_evals: 3000,
            grad_tol: 1e-12,
            f_tol: 1e-15,
            ..Default::default()
        },
    );
    g.unpack(&res.x);
    let floor = T::lit(COUNT_VAR_FLOOR);
    for c in &mut g.components {
        c.cov[0][0] = c.cov[0][0].max(floor);
        c.cov[1][1] = c.cov[1][1].max(floor);
        let lim = (c.cov[0][0] * c.cov[1][1]).sqrt() * T::lit(0.999);
        c.cov[0][1] = c.cov[0][1].max(-lim).min(lim);
        c.cov[1][0] = c.cov[0][1];
    }
    g
}

/// Fits every prior term from hard training scenes.
pub fn fit_priors<T: Real>(scenes: &[SceneLayout<T>], cfg: &PriorFitConfig) -> Result<PriorModel<T>> {
    let stats = TrainingStats::from_scenes(scenes)?;
    fit_priors_from_stats(&stats, cfg)
}

pub fn fit_priors_from_stats<T: Real>(stats: &TrainingStats<T>, cfg: &PriorFitConfig) -> Result<PriorModel<T>> {
    let table = stats.class_table.clone();
    let nc = table.num_classes();
    let mut translation = Vec::with_capacity(nc);
    for c in 0..nc {
        let base = cfg.seed.wrapping_add(1000 * c as u64);
        translation.push(Some([
            fit_axis(&stats.translations[c][0], cfg.translation_k, base)?,
            fit_axis(&stats.translations[c][1], cfg.translation_k, base + 1)?,
            fit_axis(&stats.translations[c][2], cfg.translation_k, base + 2)?,
        ]));
    }
    let mut relative = Vec::with_capacity(nc * nc);
    for p in 0..nc * nc {
        let base = cfg.seed.wrapping_add(1_000_000 + 1000 * p as u64);
        relative.push(Some([
            fit_axis(&stats.relative_translations[p][0], cfg.relative_k, base)?,
            fit_axis(&stats.relative_translations[p][1], cfg.relative_k, base + 1)?,
            fit_axis(&stats.relative_translations[p][2], cfg.relative_k, base + 2)?,
        ]));
    }
    let mut mask_enabled = vec![true; nc * nc];
    for (a, b) in &cfg.penetration_allowed {
        let (ia, ib) = (table.class_index(a)?, table.class_index(b)?);
        mask_enabled[table.pair_index(ia, ib)] = false;
    }
    let class_mixtures = stats
        .class_tables
        .iter()
        .map(|t| Some(fit_count_mixture_1d(t, cfg.count_k)))
        .collect();
    let pair_mixtures = unordered_pairs(nc)
        .iter()
        .zip(&stats.pair_tables)
        .map(|(&(a, b), t)| Some(fit_count_mixture_2d(t, table.slots_of(a) + 1, table.slots_of(b) + 1, cfg.count_pair_k)))
        .collect();
    Ok(PriorModel {
        class_table: table,
        translation,
        relative,
        mask_enabled,
        counts: CountPrior {
            class_mixtures,
            pair_mixtures,
            class_tables: stats.class_tables.clone(),
            pair_tables: stats.pair_tables.clone(),
        },
    })
}

/// `l(Φ) = l₁ + l₂` broken down by term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Regularizer<T> {
    pub l1_translation: T,
    pub l1_relative: T,
    pub l2_class: T,
    pub l2_pair: T,
}

impl<T: Real> Regularizer<T> {
    pub fn l1(&self) -> T {
        self.l1_translation + self.l1_relative
    }
    pub fn l2(&self) -> T {
        self.l2_class + self.l2_pair
    }
    pub fn total(&self) -> T {
        self.l1() + self.l2()
    }
}

/// Evaluates the regularizer; when `grad` is given, adds `weight · ∂l/∂θ` into it
/// using the offsets of `prior.layout()`.
pub fn regularizer_with_grad<T: Real>(
    prior: &PriorModel<T>,
    stats: &TrainingStats<T>,
    weight: T,
    mut grad: Option<&mut [T]>,
) -> Regularizer<T> {
    let layout = grad.as_ref().map(|_| prior.layout());
    let mut reg = Regularizer {
        l1_translation: T::zero(),
        l1_relative: T::zero(),
        l2_class: T::zero(),
        l2_pair: T::zero(),
    };
    let axes_term = |mixes: &[Option<AxisMixtures<T>>],
                         samples: &[[Vec<T>; 3]],
                         offs: Option<&Vec<Option<[usize; 3]>>>,
                         grad: &mut Option<&mut [T]>|
     -> T {
        let mut acc = T::zero();
        for (i, m) in mixes.iter().enumerate() {
            let Some(axes) = m else { continue };
            for k in 0..3 {
                let g = &axes[k];
                match (grad.as_deref_mut(), offs.and_then(|o| o[i])) {
                    (Some(out), Some(o)) => {
                        let slot = &mut out[o[k]..o[k] + g.n_params()];
                        for &x in &samples[i][k] {
                            acc -= g.accumulate_logpdf_param_grad(x, -weight, slot);
                        }
                    }
                    _ => acc -= g.log_likelihood(&samples[i][k]),
                }
            }
        }
        acc
    };
    reg.l1_translation = axes_term(
        &prior.translation,
        &stats.translations,
        layout.as_ref().map(|l| &l.translation),
        &mut grad,
    );
    reg.l1_relative = axes_term(
        &prior.relative,
        &stats.relative_translations,
        layout.as_ref().map(|l| &l.relative),
        &mut grad,
    );
    let two = T::lit(2.0);
    for (c, m) in prior.counts.class_mixtures.iter().enumerate() {
        let Some(g) = m else { continue };
        for (i, &p) in stats.class_tables[c].iter().enumerate() {
            let x = T::from_usize(i).expect("index");
            let r = g.pdf(x) - p;
            reg.l2_class += r * r;
            if let (Some(out), Some(l)) = (grad.as_deref_mut(), layout.as_ref()) {
                let o = l.count_class[c].expect("layout matches prior");
                g.accumulate_pdf_param_grad(x, weight * two * r, &mut out[o..o + g.n_params()]);
            }
        }
    }
    let t = &prior.class_table;
    for (q, (_a, b)) in unordered_pairs(t.num_classes()).into_iter().enumerate() {
        let Some(g) = &prior.counts.pair_mixtures[q] else { continue };
        let cols = t.slots_of(b) + 1;
        for (cell, &p) in stats.pair_tables[q].iter().enumerate() {
            let xy = [T::from_usize(cell / cols).expect("index"), T::from_usize(cell % cols).expect("index")];
            let r = g.pdf(xy) - p;
            reg.l2_pair += r * r;
            if let (Some(out), Some(l)) = (grad.as_deref_mut(), layout.as_ref()) {
                let o = l.count_pair[q].expect("layout matches prior");
                g.accumulate_pdf_param_grad(xy, weight * two * r, &mut out[o..o + g.n_params()]);
            }
        }
    }
    reg
}

/// `l(Φ)` of a prior against a training corpus.
pub fn regularizer_l<T: Real>(prior: &PriorModel<T>, train: &[SceneLayout<T>]) -> Result<Regularizer<T>> {
    let stats = TrainingStats::from_scenes(train)?;
    Ok(regularizer_with_grad(prior, &stats, T::one(), None))
}
