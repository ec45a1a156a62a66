//! One- and two-dimensional Gaussian mixtures: evaluation, gradients with
//! respect to the input and to the parameters, and EM fitting.
//!
//! Parameter vectors use an unconstrained layout so that gradient steps
//! keep the mixture valid: per component `[ln w, μ, ln σ²]` in 1D and
//! `[ln w, μ₀, μ₁, ln l₁₁, l₂₁, ln l₂₂]` in 2D, where `Σ = L Lᵀ`.
//! Weights are recovered with a softmax.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::real::{log_sum_exp, Real};

/// Variance floor used by EM.
pub const VARIANCE_FLOOR: f64 = 1e-6;
pub const EM_MAX_ITERS: usize = 500;
/// Convergence threshold on the mean per-sample log-likelihood.
pub const EM_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Component1<T> {
    pub weight: T,
    pub mean: T,
    pub var: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gmm1<T> {
    pub components: Vec<Component1<T>>,
}

fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|&l| (l - lse).exp().max(T::min_positive_value())).collect()
}

impl<T: Real> Gmm1<T> {
    pub fn new(components: Vec<Component1<T>>) -> Result<Self> {
        let g = Self { components };
        g.validate()?;
        Ok(g)
    }

    pub fn single(mean: T, var: T) -> Self {
        Self {
            components: vec![Component1 { weight: T::one(), mean, var }],
        }
    }

    /// Broad single Gaussian used where no data was observed.
    pub fn wide() -> Self {
        Self::single(T::zero(), T::lit(1e4))
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::InvalidParameter("mixture without components".into()));
        }
        let mut total = T::zero();
        for c in &self.components {
            if !(c.weight > T::zero()) || !(c.var > T::zero()) || !c.mean.is_finite() {
                return Err(Error::InvalidParameter(format!("bad component {c:?}")));
            }
            total += c.weight;
        }
        if (total - T::one()).abs() > T::lit(1e-6) {
            return Err(Error::InvalidParameter(format!("weights sum to {total}")));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    fn log_terms(&self, x: T) -> Vec<T> {
        let half = T::lit(0.5);
        let ln2pi = T::TAU().ln();
        self.components
            .iter()
            .map(|c| {
                let d = x - c.mean;
                c.weight.ln() - half * (ln2pi + c.var.ln()) - half * d * d / c.var
            })
            .collect()
    }

    pub fn logpdf(&self, x: T) -> T {
        log_sum_exp(&self.log_terms(x))
    }

    pub fn pdf(&self, x: T) -> T {
        self.logpdf(x).exp()
    }

    /// `(log M(x), d log M / dx)`.
    pub fn logpdf_and_grad(&self, x: T) -> (T, T) {
        let terms = self.log_terms(x);
        let lse = log_sum_exp(&terms);
        let mut g = T::zero();
        for (c, &lt) in self.components.iter().zip(&terms) {
            let r = (lt - lse).exp();
            g -= r * (x - c.mean) / c.var;
        }
        (lse, g)
    }

    pub fn logpdf_grad(&self, x: T) -> T {
        self.logpdf_and_grad(x).1
    }

    pub fn n_params(&self) -> usize {
        3 * self.k()
    }

    pub fn pack(&self, out: &mut Vec<T>) {
        for c in &self.components {
            out.extend([c.weight.ln(), c.mean, c.var.ln()]);
        }
    }

    /// Reads `n_params()` values; returns the remaining slice.
    pub fn unpack<'a>(&mut self, src: &'a [T]) -> &'a [T] {
        let k = self.k();
        let (mine, rest) = src.split_at(3 * k);
        let logits: Vec<T> = mine.chunks_exact(3).map(|p| p[0]).collect();
        let w = softmax(&logits);
        for (i, c) in self.components.iter_mut().enumerate() {
            c.weight = w[i];
            c.mean = mine[3 * i + 1];
            c.var = bounded_exp(mine[3 * i + 2]);
        }
        rest
    }

    /// Adds `scale · ∂ log M(x) / ∂θ` into `out` (length `n_params()`); returns `log M(x)`.
    pub fn accumulate_logpdf_param_grad(&self, x: T, scale: T, out: &mut [T]) -> T {
        let terms = self.log_terms(x);
        let lse = log_sum_exp(&terms);
        let half = T::lit(0.5);
        for (i, (c, &lt)) in self.components.iter().zip(&terms).enumerate() {
            let r = (lt - lse).exp();
            let d = x - c.mean;
            out[3 * i] += scale * (r - c.weight);
            out[3 * i + 1] += scale * r * d / c.var;
            out[3 * i + 2] += scale * r * (d * d / c.var - T::one()) * half;
        }
        lse
    }

    /// Adds `scale · ∂ M(x) / ∂θ` into `out`; returns `M(x)`.
    pub fn accumulate_pdf_param_grad(&self, x: T, scale: T, out: &mut [T]) -> T {
        let p = self.pdf(x);
        self.accumulate_logpdf_param_grad(x, scale * p, out);
        p
    }

    pub fn log_likelihood(&self, samples: &[T]) -> T {
        samples.iter().map(|&x| self.logpdf(x)).sum()
    }

    pub fn cast<U: Real>(&self) -> Gmm1<U> {
        let c = |x: T| U::from(x).expect("castable scalar");
        Gmm1 {
            components: self
                .components
                .iter()
                .map(|p| Component1 {
                    weight: c(p.weight),
                    mean: c(p.mean),
                    var: c(p.var),
                })
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Component2<T> {
    pub weight: T,
    pub mean: [T; 2],
    /// Symmetric positive-definite covariance.
    pub cov: [[T; 2]; 2],
}

impl<T: Real> Component2<T> {
    fn cholesky(&self) -> Option<(T, T, T)> {
        let a = self.cov[0][0];
        if !(a > T::zero()) {
            return None;
        }
        let l11 = a.sqrt();
        let l21 = self.cov[1][0] / l11;
        let rem = self.cov[1][1] - l21 * l21;
        if !(rem > T::zero()) {
            return None;
        }
        Some((l11, l21, rem.sqrt()))
    }

    /// Cholesky factor that never fails; rounding-level indefiniteness is floored.
    fn cholesky_lenient(&self) -> (T, T, T) {
        if let Some(f) = self.cholesky() {
            return f;
        }
        let tiny = T::min_positive_value();
        let l11 = self.cov[0][0].max(tiny).sqrt();
        let l21 = self.cov[1][0] / l11;
        let rem = (self.cov[1][1] - l21 * l21).max(self.cov[1][1].abs() * T::epsilon() * T::lit(16.0)).max(tiny);
        (l11, l21, rem.sqrt())
    }
}

/// Bound on unconstrained log-scale parameters so unpacking never overflows.
const LOG_SCALE_BOUND: f64 = 40.0;

fn bounded_exp<T: Real>(v: T) -> T {
    let b = T::lit(LOG_SCALE_BOUND);
    v.max(-b).min(b).exp()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gmm2<T> {
    pub components: Vec<Component2<T>>,
}

struct Eval2<T> {
    log_term: T,
    u: [T; 2],
    chol: (T, T, T),
}

impl<T: Real> Gmm2<T> {
    pub fn new(components: Vec<Component2<T>>) -> Result<Self> {
        let g = Self { components };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::InvalidParameter("mixture without components".into()));
        }
        let mut total = T::zero();
        for c in &self.components {
            if !(c.weight > T::zero()) || c.cholesky().is_none() || (c.cov[0][1] - c.cov[1][0]).abs() > T::lit(1e-12) {
                return Err(Error::InvalidParameter(format!("bad component {c:?}")));
            }
            total += c.weight;
        }
        if (total - T::one()).abs() > T::lit(1e-6) {
            return Err(Error::InvalidParameter(format!("weights sum to {total}")));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    fn evals(&self, x: [T; 2]) -> Vec<Eval2<T>> {
        let half = T::lit(0.5);
        let ln2pi = T::TAU().ln();
        self.components
            .iter()
            .map(|c| {
                let (l11, l21, l22) = c.cholesky_lenient();
                let d0 = x[0] - c.mean[0];
                let d1 = x[1] - c.mean[1];
                let u0 = d0 / l11;
                let u1 = (d1 - l21 * u0) / l22;
                Eval2 {
                    log_term: c.weight.ln() - ln2pi - l11.ln() - l22.ln() - half * (u0 * u0 + u1 * u1),
                    u: [u0, u1],
                    chol: (l11, l21, l22),
                }
            })
            .collect()
    }

    pub fn logpdf(&self, x: [T; 2]) -> T {
        let terms: Vec<T> = self.evals(x).iter().map(|e| e.log_term).collect();
        log_sum_exp(&terms)
    }

    pub fn pdf(&self, x: [T; 2]) -> T {
        self.logpdf(x).exp()
    }

    pub fn logpdf_and_grad(&self, x: [T; 2]) -> (T, [T; 2]) {
        let ev = self.evals(x);
        let terms: Vec<T> = ev.iter().map(|e| e.log_term).collect();
        let lse = log_sum_exp(&terms);
        let mut g = [T::zero(); 2];
        for e in &ev {
            let r = (e.log_term - lse).exp();
            let (l11, l21, l22) = e.chol;
            // Σ⁻¹ d = L⁻ᵀ u
            let g1 = e.u[1] / l22;
            let g0 = (e.u[0] - l21 * g1) / l11;
            g[0] -= r * g0;
            g[1] -= r * g1;
        }
        (lse, g)
    }

    pub fn logpdf_grad(&self, x: [T; 2]) -> [T; 2] {
        self.logpdf_and_grad(x).1
    }

    pub fn n_params(&self) -> usize {
        6 * self.k()
    }

    pub fn pack(&self, out: &mut Vec<T>) {
        for c in &self.components {
            let (l11, l21, l22) = c.cholesky_lenient();
            out.extend([c.weight.ln(), c.mean[0], c.mean[1], l11.ln(), l21, l22.ln()]);
        }
    }

    pub fn unpack<'a>(&mut self, src: &'a [T]) -> &'a [T] {
        let k = self.k();
        let (mine, rest) = src.split_at(6 * k);
        let logits: Vec<T> = mine.chunks_exact(6).map(|p| p[0]).collect();
        let w = softmax(&logits);
        for (i, c) in self.components.iter_mut().enumerate() {
            let p = &mine[6 * i..6 * i + 6];
            let (l11, l21, l22) = (bounded_exp(p[3]), p[4], bounded_exp(p[5]));
            c.weight = w[i];
            c.mean = [p[1], p[2]];
            let off = l11 * l21;
            c.cov = [[l11 * l11, off], [off, l21 * l21 + l22 * l22]];
        }
        rest
    }

    pub fn accumulate_logpdf_param_grad(&self, x: [T; 2], scale: T, out: &mut [T]) -> T {
        let ev = self.evals(x);
        let terms: Vec<T> = ev.iter().map(|e| e.log_term).collect();
        let lse = log_sum_exp(&terms);
        for (i, (c, e)) in self.components.iter().zip(&ev).enumerate() {
            let r = (e.log_term - lse).exp();
            let (l11, l21, l22) = e.chol;
            let [u0, u1] = e.u;
            let g1 = u1 / l22;
            let g0 = (u0 - l21 * g1) / l11;
            let o = &mut out[6 * i..6 * i + 6];
            o[0] += scale * (r - c.weight);
            o[1] += scale * r * g0;
            o[2] += scale * r * g1;
            o[3] += scale * r * (u0 * u0 - u1 * l21 * u0 / l22 - T::one());
            o[4] += scale * r * u0 * u1 / l22;
            o[5] += scale * r * (u1 * u1 - T::one());
        }
        lse
    }

    pub fn accumulate_pdf_param_grad(&self, x: [T; 2], scale: T, out: &mut [T]) -> T {
        let p = self.pdf(x);
        self.accumulate_logpdf_param_grad(x, scale * p, out);
        p
    }

    pub fn log_likelihood(&self, samples: &[[T; 2]]) -> T {
        samples.iter().map(|&x| self.logpdf(x)).sum()
    }

    pub fn cast<U: Real>(&self) -> Gmm2<U> {
        let c = |x: T| U::from(x).expect("castable scalar");
        Gmm2 {
            components: self
                .components
                .iter()
                .map(|p| Component2 {
                    weight: c(p.weight),
                    mean: p.mean.map(c),
                    cov: p.cov.map(|r| r.map(c)),
                })
                .collect(),
        }
    }
}

/// Mixture of either dimensionality, as produced by [`fit_gmm_em`].
#[derive(Clone, Debug, PartialEq)]
pub enum Gmm<T> {
    One(Gmm1<T>),
    Two(Gmm2<T>),
}

impl<T: Real> Gmm<T> {
    pub fn logpdf(&self, x: &[T]) -> T {
        match self {
            Gmm::One(g) => g.logpdf(x[0]),
            Gmm::Two(g) => g.logpdf([x[0], x[1]]),
        }
    }
}

/// Outcome of an EM run.
#[derive(Clone, Debug)]
pub struct EmFit<G, T> {
    pub gmm: G,
    /// Total log-likelihood of the samples after initialization and after each iteration.
    pub log_likelihood: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
}

fn count_distinct<T: Real, const D: usize>(samples: &[[T; D]]) -> usize {
    let mut v: Vec<[T; D]> = samples.to_vec();
    v.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    v.dedup();
    v.len()
}

fn sq_dist<T: Real, const D: usize>(a: &[T; D], b: &[T; D]) -> T {
    a.iter().zip(b).map(|(x, y)| (*x - *y) * (*x - *y)).sum()
}

/// k-means++ seeding followed by one nearest-center assignment.
fn kmeanspp_assign<T: Real, const D: usize>(samples: &[[T; D]], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = samples.len();
    let mut centers = vec![samples[rng.random_range(0..n)]];
    let mut d2: Vec<f64> = samples.iter().map(|x| sq_dist(x, &centers[0]).to_f64_lossy()).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(samples[next]);
        for (i, x) in samples.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(x, &centers[centers.len() - 1]).to_f64_lossy());
        }
    }
    samples
        .iter()
        .map(|x| {
            (0..k)
                .min_by(|&a, &b| {
                    sq_dist(x, &centers[a])
                        .partial_cmp(&sq_dist(x, &centers[b]))
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
                .unwrap_or(0)
        })
        .collect()
}

fn precheck<T: Real, const D: usize>(samples: &[[T; D]], k: usize) -> Result<Option<()>> {
    if k == 0 {
        return Err(Error::InvalidParameter("K must be positive".into()));
    }
    if samples.is_empty() {
        return Err(Error::Degenerate("no samples".into()));
    }
    if samples.iter().any(|s| s.iter().any(|x| !x.is_finite())) {
        return Err(Error::Degenerate("non-finite sample".into()));
    }
    let distinct = count_distinct(samples);
    if distinct == 1 {
        return Ok(None);
    }
    if k > distinct {
        return Err(Error::Degenerate(format!("K = {k} exceeds {distinct} distinct samples")));
    }
    Ok(Some(()))
}

/// EM for a 1D mixture with `k` components.
pub fn fit_gmm1_em<T: Real>(samples: &[T], k: usize, seed: u64) -> Result<EmFit<Gmm1<T>, T>> {
    let pts: Vec<[T; 1]> = samples.iter().map(|&x| [x]).collect();
    let floor = T::lit(VARIANCE_FLOOR);
    if precheck(&pts, k)?.is_none() {
        let g = Gmm1::single(samples[0], floor);
        let ll = g.log_likelihood(samples);
        return Ok(EmFit {
            gmm: g,
            log_likelihood: vec![ll],
            iterations: 0,
            converged: true,
        });
    }
    let n = samples.len();
    let nt = T::from_usize(n).expect("sample count");
    let assign = kmeanspp_assign(&pts, k, seed);
    let mut resp = vec![T::zero(); n * k];
    for (i, &a) in assign.iter().enumerate() {
        resp[i * k + a] = T::one();
    }

    let m_step = |resp: &[T], k: usize| -> Vec<Component1<T>> {
        let mut comps = Vec::with_capacity(k);
        for j in 0..k {
            let nk: T = (0..n).map(|i| resp[i * k + j]).sum();
            if nk <= nt * T::lit(1e-12) {
                continue;
            }
            let mean = (0..n).map(|i| resp[i * k + j] * samples[i]).sum::<T>() / nk;
            let var = (0..n)
                .map(|i| {
                    let d = samples[i] - mean;
                    resp[i * k + j] * d * d
                })
                .sum::<T>()
                / nk;
            comps.push(Component1 {
                weight: nk / nt,
                mean,
                var: var.max(floor),
            });
        }
        comps
    };

    let mut gmm = Gmm1 { components: m_step(&resp, k) };
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..EM_MAX_ITERS {
        // E-step; also yields the log-likelihood of the current parameters
        let kk = gmm.k();
        resp.resize(n * kk, T::zero());
        let mut ll = T::zero();
        for (i, &x) in samples.iter().enumerate() {
            let terms = gmm.log_terms(x);
            let lse = log_sum_exp(&terms);
            ll += lse;
            for j in 0..kk {
                resp[i * kk + j] = (terms[j] - lse).exp();
            }
        }
        if let Some(&prev) = trace.last() {
            if (ll - prev) / nt < T::lit(EM_TOL) {
                trace.push(ll);
                converged = true;
                break;
            }
        }
        trace.push(ll);
        gmm = Gmm1 { components: m_step(&resp, kk) };
        iterations += 1;
    }
    if !converged {
        trace.push(gmm.log_likelihood(samples));
    }
    Ok(EmFit {
        gmm,
        log_likelihood: trace,
        iterations,
        converged,
    })
}

/// Clamps the eigenvalues of a symmetric 2×2 matrix from below.
fn clamp_eigen<T: Real>(m: [[T; 2]; 2], floor: T) -> [[T; 2]; 2] {
    let (a, b, d) = (m[0][0], m[0][1], m[1][1]);
    let half = T::lit(0.5);
    let mid = half * (a + d);
    let rad = (half * half * (a - d) * (a - d) + b * b).sqrt();
    let (l1, l2) = (mid + rad, mid - rad);
    if l2 >= floor {
        return m;
    }
    // eigenvector for l1
    let (vx, vy) = if b.abs() > T::epsilon() * (a.abs() + d.abs() + T::one()) {
        let (x, y) = (l1 - d, b);
        let nrm = (x * x + y * y).sqrt();
        (x / nrm, y / nrm)
    } else if a >= d {
        (T::one(), T::zero())
    } else {
        (T::zero(), T::one())
    };
    let (l1, l2) = (l1.max(floor), l2.max(floor));
    // R diag(l1, l2) Rᵀ with R = [v, v⊥]
    let (ux, uy) = (-vy, vx);
    let off = l1 * vx * vy + l2 * ux * uy;
    [[l1 * vx * vx + l2 * ux * ux, off], [off, l1 * vy * vy + l2 * uy * uy]]
}

/// EM for a 2D mixture with full covariances.
pub fn fit_gmm2_em<T: Real>(samples: &[[T; 2]], k: usize, seed: u64) -> Result<EmFit<Gmm2<T>, T>> {
    let floor = T::lit(VARIANCE_FLOOR);
    if precheck(samples, k)?.is_none() {
        let g = Gmm2 {
            components: vec![Component2 {
                weight: T::one(),
                mean: samples[0],
                cov: [[floor, T::zero()], [T::zero(), floor]],
            }],
        };
        let ll = g.log_likelihood(samples);
        return Ok(EmFit {
            gmm: g,
            log_likelihood: vec![ll],
            iterations: 0,
            converged: true,
        });
    }
    let n = samples.len();
    let nt = T::from_usize(n).expect("sample count");
    let assign = kmeanspp_assign(samples, k, seed);
    let mut resp = vec![T::zero(); n * k];
    for (i, &a) in assign.iter().enumerate() {
        resp[i * k + a] = T::one();
    }
    let m_step = |resp: &[T], k: usize| -> Vec<Component2<T>> {
        let mut comps = Vec::with_capacity(k);
        for j in 0..k {
            let nk: T = (0..n).map(|i| resp[i * k + j]).sum();
            if nk <= nt * T::lit(1e-12) {
                continue;
            }
            let mut mean = [T::zero(); 2];
            for (i, x) in samples.iter().enumerate() {
                mean[0] += resp[i * k + j] * x[0];
                mean[1] += resp[i * k + j] * x[1];
            }
            mean = mean.map(|m| m / nk);
            let mut cov = [[T::zero(); 2]; 2];
            for (i, x) in samples.iter().enumerate() {
                let d = [x[0] - mean[0], x[1] - mean[1]];
                let r = resp[i * k + j];
                cov[0][0] += r * d[0] * d[0];
                cov[0][1] += r * d[0] * d[1];
                cov[1][1] += r * d[1] * d[1];
            }
            cov[0][0] /= nk;
            cov[0][1] /= nk;
            cov[1][1] /= nk;
            cov[1][0] = cov[0][1];
            comps.push(Component2 {
                weight: nk / nt,
                mean,
                cov: clamp_eigen(cov, floor),
            });
        }
        comps
    };
    let mut gmm = Gmm2 { components: m_step(&resp, k) };
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..EM_MAX_ITERS {
        let kk = gmm.k();
        resp.resize(n * kk, T::zero());
        let mut ll = T::zero();
        for (i, &x) in samples.iter().enumerate() {
            let terms: Vec<T> = gmm.evals(x).iter().map(|e| e.log_term).collect();
            let lse = log_sum_exp(&terms);
            ll += lse;
            for j in 0..kk {
                resp[i * kk + j] = (terms[j] - lse).exp();
            }
        }
        if let Some(&prev) = trace.last() {
            if (ll - prev) / nt < T::lit(EM_TOL) {
                trace.push(ll);
                converged = true;
                break;
            }
        }
        trace.push(ll);
        gmm = Gmm2 { components: m_step(&resp, kk) };
        iterations += 1;
    }
    if !converged {
        trace.push(gmm.log_likelihood(samples));
    }
    Ok(EmFit {
        gmm,
        log_likelihood: trace,
        iterations,
        converged,
    })
}

/// Dimension-generic entry point; every sample must have length 1 or 2.
pub fn fit_gmm_em<T: Real>(samples: &[Vec<T>], k: usize, seed: u64) -> Result<EmFit<Gmm<T>, T>> {
    let d = samples.first().map(Vec::len).ok_or_else(|| Error::Degenerate("no samples".into()))?;
    if samples.iter().any(|s| s.len() != d) {
        return Err(Error::LengthMismatch("samples of differing dimension".into()));
    }
    match d {
        1 => {
            let xs: Vec<T> = samples.iter().map(|s| s[0]).collect();
            let f = fit_gmm1_em(&xs, k, seed)?;
            Ok(EmFit {
                gmm: Gmm::One(f.gmm),
                log_likelihood: f.log_likelihood,
                iterations: f.iterations,
                converged: f.converged,
            })
        }
        2 => {
            let xs: Vec<[T; 2]> = samples.iter().map(|s| [s[0], s[1]]).collect();
            let f = fit_gmm2_em(&xs, k, seed)?;
            Ok(EmFit {
                gmm: Gmm::Two(f.gmm),
                log_likelihood: f.log_likelihood,
                iterations: f.iterations,
                converged: f.converged,
            })
        }
        _ => Err(Error::InvalidParameter(format!("unsupported dimension {d}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_normal_at_zero() {
        let g = Gmm1::single(0.0_f64, 1.0);
        assert!((g.logpdf(0.0) - (-0.918_938_533_204_672_7)).abs() < 1e-12);
    }

    #[test]
    fn symmetric_mixture_has_zero_gradient_at_midpoint() {
        let g = Gmm1::new(vec![
            Component1 { weight: 0.5, mean: -2.0, var: 0.7 },
            Component1 { weight: 0.5, mean: 2.0, var: 0.7 },
        ])
        .unwrap();
        assert!(g.logpdf_grad(0.0_f64).abs() < 1e-15);
    }

    #[test]
    fn single_component_fit_is_mle() {
        let xs = [1.0_f64, 2.0, 4.0, 7.0, -1.0];
        let fit = fit_gmm1_em(&xs, 1, 0).unwrap();
        let mean = xs.iter().sum::<f64>() / 5.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 5.0;
        let c = fit.gmm.components[0];
        assert!((c.mean - mean).abs() < 1e-12);
        assert!((c.var - var).abs() < 1e-12);
        assert_eq!(c.weight, 1.0);
    }

    #[test]
    fn constant_samples_floor_variance() {
        let fit = fit_gmm1_em(&[3.0_f64; 10], 4, 1).unwrap();
        assert_eq!(fit.gmm.k(), 1);
        assert_eq!(fit.gmm.components[0].var, VARIANCE_FLOOR);
        assert_eq!(fit.gmm.components[0].mean, 3.0);
    }

    #[test]
    fn too_many_components_rejected() {
        assert!(matches!(fit_gmm1_em(&[1.0_f64, 2.0, 1.0], 3, 0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn pack_unpack_is_identity() {
        let g = Gmm1::new(vec![
            Component1 { weight: 0.3, mean: -1.0, var: 0.5 },
            Component1 { weight: 0.7, mean: 2.0, var: 1.5 },
        ])
        .unwrap();
        let mut v: Vec<f64> = Vec::new();
        g.pack(&mut v);
        let mut h = g.clone();
        h.components[0].mean = 9.0;
        assert!(h.unpack(&v).is_empty());
        for (a, b) in g.components.iter().zip(&h.components) {
            assert!((a.weight - b.weight).abs() < 1e-15);
            assert!((a.mean - b.mean).abs() < 1e-15);
            assert!((a.var - b.var).abs() < 1e-15);
        }
    }

    #[test]
    fn eigen_clamp_keeps_well_conditioned() {
        let m = [[2.0_f64, 0.5], [0.5, 1.0]];
        assert_eq!(clamp_eigen(m, 1e-6), m);
        let sing = [[1.0_f64, 1.0], [1.0, 1.0]];
        let c = clamp_eigen(sing, 1e-3);
        let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
        assert!((det - 2.0 * 1e-3).abs() < 1e-9);
    }

    #[test]
    fn two_dim_fit_single_component() {
        let xs = [[0.0_f64, 1.0], [1.0, 0.0], [2.0, 2.0], [1.0, 3.0]];
        let fit = fit_gmm2_em(&xs, 1, 0).unwrap();
        let c = fit.gmm.components[0];
        assert!((c.mean[0] - 1.0).abs() < 1e-12);
        assert!((c.mean[1] - 1.5).abs() < 1e-12);
    }
}
