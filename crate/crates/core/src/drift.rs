//! Drift fields `f(x, t)` standing in for a trained score network, and the
//! evaluation accounting every cost metric is built on.
//!
//! Fields are pure: evaluating one never mutates anything. Callers own the
//! bookkeeping through [`EvalCounter`] (or wrap a field in [`CountingField`]
//! when they want an independent tally).

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_logdet, cholesky_solve, matvec};
use crate::rng::{seeded, standard_normal, unit_f64, SplitMix64};
use crate::scalar::Scalar;

/// A deterministic vector field on `R^D x [0, 1]`.
pub trait DriftField<T: Scalar>: Send + Sync {
    fn dim(&self) -> usize;

    fn label(&self) -> &str;

    /// Writes `f(x, t)` into `out`. Both slices have length [`DriftField::dim`].
    fn eval_into(&self, x: &[T], t: T, out: &mut [T]);

    fn eval(&self, x: &[T], t: T) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim()];
        self.eval_into(x, t, &mut out);
        out
    }
}

impl<T: Scalar, F: DriftField<T> + ?Sized> DriftField<T> for Arc<F> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn label(&self) -> &str {
        (**self).label()
    }
    fn eval_into(&self, x: &[T], t: T, out: &mut [T]) {
        (**self).eval_into(x, t, out)
    }
}

impl<T: Scalar, F: DriftField<T> + ?Sized> DriftField<T> for Box<F> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn label(&self) -> &str {
        (**self).label()
    }
    fn eval_into(&self, x: &[T], t: T, out: &mut [T]) {
        (**self).eval_into(x, t, out)
    }
}

impl<T: Scalar, F: DriftField<T> + ?Sized> DriftField<T> for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn label(&self) -> &str {
        (**self).label()
    }
    fn eval_into(&self, x: &[T], t: T, out: &mut [T]) {
        (**self).eval_into(x, t, out)
    }
}

/// Shared, type-erased field handle.
pub type SharedField<T> = Arc<dyn DriftField<T>>;

/// Per-core drift-evaluation tally.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EvalCounter {
    per_core: Vec<u64>,
}

impl EvalCounter {
    pub fn new(cores: usize) -> Self {
        Self {
            per_core: vec![0; cores],
        }
    }

    /// Records `n` evaluations against core `k` (1-based).
    pub fn record(&mut self, k: usize, n: u64) {
        self.per_core[k - 1] += n;
    }

    pub fn total(&self) -> u64 {
        self.per_core.iter().sum()
    }

    pub fn per_core(&self) -> &[u64] {
        &self.per_core
    }
}

/// Wraps a field and counts evaluations with an atomic tally.
pub struct CountingField<F> {
    inner: F,
    count: AtomicU64,
}

impl<F> CountingField<F> {
    pub fn new(inner: F) -> Self {
        Self {
            inner,
            count: AtomicU64::new(0),
        }
    }

    pub fn count(&self) -> u64 {
        self.count.load(Ordering::SeqCst)
    }
}

impl<T: Scalar, F: DriftField<T>> DriftField<T> for CountingField<F> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn label(&self) -> &str {
        self.inner.label()
    }
    fn eval_into(&self, x: &[T], t: T, out: &mut [T]) {
        self.count.fetch_add(1, Ordering::SeqCst);
        self.inner.eval_into(x, t, out)
    }
}

/// `f(x, t) = lambda * x`.
#[derive(Debug, Clone)]
pub struct LinearField<T> {
    lambda: T,
    dim: usize,
    label: String,
}

impl<T: Scalar> LinearField<T> {
    pub fn new(lambda: T, dim: usize) -> Self {
        Self {
            lambda,
            dim,
            label: format!("linear(lambda={lambda})"),
        }
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    /// Exact flow `x0 * exp(lambda * t)`.
    pub fn exact(&self, x0: &[T], t: T) -> Vec<T> {
        let g = (self.lambda * t).exp();
        x0.iter().map(|&v| v * g).collect()
    }
}

impl<T: Scalar> DriftField<T> for LinearField<T> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn label(&self) -> &str {
        &self.label
    }
    fn eval_into(&self, x: &[T], _t: T, out: &mut [T]) {
        for (o, &v) in out.iter_mut().zip(x) {
            *o = self.lambda * v;
        }
    }
}

#[derive(Debug, Clone)]
struct Dense<T> {
    rows: usize,
    cols: usize,
    w: Vec<T>,
    b: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    /// Weights and biases uniform on `[-sqrt(3/fan_in), sqrt(3/fan_in))`, i.e. variance `1/fan_in`.
    fn draw(rows: usize, cols: usize, rng: &mut SplitMix64) -> Self {
        let scale = (3.0 / cols as f64).sqrt();
        let mut draw = || T::lit((2.0 * unit_f64(rng) - 1.0) * scale);
        let w = (0..rows * cols).map(|_| draw()).collect();
        let b = (0..rows).map(|_| draw()).collect();
        Self { rows, cols, w, b }
    }

    fn affine(&self, z: &[T], out: &mut [T]) {
        for r in 0..self.rows {
            let row = &self.w[r * self.cols..(r + 1) * self.cols];
            out[r] = self.b[r] + row.iter().zip(z).map(|(&a, &b)| a * b).sum::<T>();
        }
    }

    fn linear(&self, z: &[T], out: &mut [T]) {
        for r in 0..self.rows {
            let row = &self.w[r * self.cols..(r + 1) * self.cols];
            out[r] = row.iter().zip(z).map(|(&a, &b)| a * b).sum::<T>();
        }
    }
}

/// Fixed-weight tanh network on the input `[x, t]`.
///
/// `depth` hidden layers of size `width`, linear read-out to `D` outputs.
/// Parameters are drawn once from SplitMix64 seeded with `seed`, in layer
/// order, weights row-major before biases.
#[derive(Debug, Clone)]
pub struct MlpField<T> {
    dim: usize,
    layers: Vec<Dense<T>>,
    label: String,
}

impl<T: Scalar> MlpField<T> {
    pub fn new(seed: u64, dim: usize, width: usize, depth: usize) -> Result<Self> {
        if width == 0 || depth == 0 || dim == 0 {
            return Err(Error::invalid("mlp field needs dim, width and depth >= 1"));
        }
        let mut rng = seeded(seed);
        let mut layers = Vec::with_capacity(depth + 1);
        let mut fan_in = dim + 1;
        for _ in 0..depth {
            layers.push(Dense::draw(width, fan_in, &mut rng));
            fan_in = width;
        }
        layers.push(Dense::draw(dim, fan_in, &mut rng));
        Ok(Self {
            dim,
            layers,
            label: format!("mlp(seed={seed},d={dim},w={width},l={depth})"),
        })
    }

    /// Directional derivative `J_x f . v + (df/dt) . vt` by forward-mode propagation.
    pub fn directional_derivative(&self, x: &[T], t: T, v: &[T], vt: T) -> Vec<T> {
        let mut z: Vec<T> = x.iter().copied().chain(std::iter::once(t)).collect();
        let mut dz: Vec<T> = v.iter().copied().chain(std::iter::once(vt)).collect();
        let (hidden, last) = self.layers.split_at(self.layers.len() - 1);
        for layer in hidden {
            let mut a = vec![T::zero(); layer.rows];
            let mut da = vec![T::zero(); layer.rows];
            layer.affine(&z, &mut a);
            layer.linear(&dz, &mut da);
            for (ai, dai) in a.iter_mut().zip(da.iter_mut()) {
                let h = ai.tanh();
                *dai = (T::one() - h * h) * *dai;
                *ai = h;
            }
            z = a;
            dz = da;
        }
        let mut out = vec![T::zero(); self.dim];
        last[0].linear(&dz, &mut out);
        out
    }
}

impl<T: Scalar> DriftField<T> for MlpField<T> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn label(&self) -> &str {
        &self.label
    }
    fn eval_into(&self, x: &[T], t: T, out: &mut [T]) {
        let mut z: Vec<T> = Vec::with_capacity(self.dim + 1);
        z.extend_from_slice(x);
        z.push(t);
        let (hidden, last) = self.layers.split_at(self.layers.len() - 1);
        for layer in hidden {
            let mut a = vec![T::zero(); layer.rows];
            layer.affine(&z, &mut a);
            for v in a.iter_mut() {
                *v = v.tanh();
            }
            z = a;
        }
        last[0].affine(&z, out);
    }
}

/// Weighted sum of full-covariance Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture<T> {
    dim: usize,
    weights: Vec<T>,
    means: Vec<Vec<T>>,
    /// Row-major `D x D` covariances.
    covs: Vec<Vec<T>>,
    chols: Vec<Vec<T>>,
}

impl<T: Scalar> GaussianMixture<T> {
    pub fn new(weights: Vec<T>, means: Vec<Vec<T>>, covs: Vec<Vec<T>>) -> Result<Self> {
        let m = weights.len();
        if m == 0 {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        if means.len() != m || covs.len() != m {
            return Err(Error::invalid("weights, means and covariances must have equal length"));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::invalid("mixture dimension must be positive"));
        }
        if weights.iter().any(|&w| !(w > T::zero())) {
            return Err(Error::invalid("mixture weights must be positive"));
        }
        let total: T = weights.iter().copied().sum();
        if (total - T::one()).abs() > T::lit(1e-12).max(T::epsilon() * T::from_count(4 * m)) {
            return Err(Error::invalid(format!("mixture weights sum to {total}, expected 1")));
        }
        let mut chols = Vec::with_capacity(m);
        for (j, (mu, cov)) in means.iter().zip(&covs).enumerate() {
            if mu.len() != dim || cov.len() != dim * dim {
                return Err(Error::invalid(format!("component {j} has inconsistent dimension")));
            }
            let sym = (0..dim).all(|a| (0..dim).all(|b| cov[a * dim + b] == cov[b * dim + a]));
            if !sym {
                return Err(Error::invalid(format!("covariance {j} is not symmetric")));
            }
            let l = cholesky(cov, dim)
                .ok_or_else(|| Error::invalid(format!("covariance {j} is not positive-definite")))?;
            chols.push(l);
        }
        Ok(Self {
            dim,
            weights,
            means,
            covs,
            chols,
        })
    }

    /// `components` isotropic Gaussians with standard deviation `std`, equally
    /// weighted, centered on a circle of radius `radius` in the first two
    /// coordinates.
    pub fn ring(components: usize, dim: usize, radius: T, std: T) -> Result<Self> {
        if components == 0 || dim < 2 {
            return Err(Error::invalid("ring mixture needs >= 1 component and dim >= 2"));
        }
        let w = T::one() / T::from_count(components);
        let weights = vec![w; components];
        let two_pi = T::lit(2.0) * T::PI();
        let means = (0..components)
            .map(|j| {
                let a = two_pi * T::from_count(j) / T::from_count(components);
                let mut mu = vec![T::zero(); dim];
                mu[0] = radius * a.cos();
                mu[1] = radius * a.sin();
                mu
            })
            .collect();
        let mut cov = vec![T::zero(); dim * dim];
        for i in 0..dim {
            cov[i * dim + i] = std * std;
        }
        let covs = vec![cov; components];
        Self::new(weights, means, covs)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<T>] {
        &self.means
    }

    pub fn covariances(&self) -> &[Vec<T>] {
        &self.covs
    }

    /// `ln p(x)` via log-sum-exp over components.
    pub fn log_density(&self, x: &[T]) -> T {
        let d = self.dim;
        let ln2pi = (T::lit(2.0) * T::PI()).ln();
        let mut logs = Vec::with_capacity(self.components());
        let mut r = vec![T::zero(); d];
        for j in 0..self.components() {
            let l = &self.chols[j];
            for i in 0..d {
                r[i] = x[i] - self.means[j][i];
            }
            let mut y = r.clone();
            cholesky_solve(l, d, &mut y);
            let quad: T = r.iter().zip(&y).map(|(&a, &b)| a * b).sum();
            let half = T::lit(0.5);
            logs.push(
                self.weights[j].ln() - half * quad - half * cholesky_logdet(l, d)
                    - half * T::from_count(d) * ln2pi,
            );
        }
        log_sum_exp(&logs)
    }

    pub fn sample(&self, rng: &mut SplitMix64) -> Vec<T> {
        let u = unit_f64(rng);
        let mut acc = 0.0;
        let mut j = self.components() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w.as_f64();
            if u < acc {
                j = i;
                break;
            }
        }
        let z: Vec<T> = standard_normal(rng, self.dim);
        let l = &self.chols[j];
        (0..self.dim)
            .map(|i| self.means[j][i] + (0..=i).map(|p| l[i * self.dim + p] * z[p]).sum::<T>())
            .collect()
    }
}

pub(crate) fn log_sum_exp<T: Scalar>(v: &[T]) -> T {
    let m = v.iter().copied().fold(T::neg_infinity(), T::max);
    if m == T::neg_infinity() {
        return m;
    }
    m + v.iter().map(|&a| (a - m).exp()).sum::<T>().ln()
}

/// Exact marginal velocity of the straight noise-to-data path
/// `x_t = (1 - t) eps + t x1`, `eps ~ N(0, I)`, `x1 ~` mixture.
///
/// Per component, `x_t ~ N(t mu, A(t))` with `A(t) = (1-t)^2 I + t^2 Sigma`, and
/// `E[x1 - eps | x_t] = mu + (t Sigma - (1-t) I) A(t)^{-1} (x_t - t mu)`.
/// Components are blended by their posterior responsibilities.
#[derive(Debug, Clone)]
pub struct GmmFlowField<T> {
    mix: GaussianMixture<T>,
    label: String,
}

impl<T: Scalar> GmmFlowField<T> {
    pub fn new(mix: GaussianMixture<T>) -> Self {
        let label = format!("gmm_flow(m={},d={})", mix.components(), mix.dim());
        Self { mix, label }
    }

    pub fn mixture(&self) -> &GaussianMixture<T> {
        &self.mix
    }

    /// Posterior component weights at `(x, t)`.
    pub fn responsibilities(&self, x: &[T], t: T) -> Vec<T> {
        let mut resp = vec![T::zero(); self.mix.components()];
        let mut out = vec![T::zero(); self.mix.dim];
        self.eval_with(x, t, &mut out, &mut resp);
        resp
    }

    fn eval_with(&self, x: &[T], t: T, out: &mut [T], resp: &mut [T]) {
        let d = self.mix.dim;
        let m = self.mix.components();
        let one = T::one();
        let s = one - t;
        let half = T::lit(0.5);
        let mut velocities = vec![T::zero(); m * d];
        let mut a = vec![T::zero(); d * d];
        let mut r = vec![T::zero(); d];
        let mut sy = vec![T::zero(); d];
        for j in 0..m {
            let cov = &self.mix.covs[j];
            let mu = &self.mix.means[j];
            for p in 0..d * d {
                a[p] = t * t * cov[p];
            }
            for i in 0..d {
                a[i * d + i] += s * s;
            }
            let l = cholesky(&a, d).expect("A(t) is SPD for SPD covariances");
            for i in 0..d {
                r[i] = x[i] - t * mu[i];
            }
            let mut y = r.clone();
            cholesky_solve(&l, d, &mut y);
            let quad: T = r.iter().zip(&y).map(|(&p, &q)| p * q).sum();
            resp[j] = self.mix.weights[j].ln() - half * quad - half * cholesky_logdet(&l, d);
            matvec(cov, d, &y, &mut sy);
            let v = &mut velocities[j * d..(j + 1) * d];
            for i in 0..d {
                v[i] = mu[i] + t * sy[i] - s * y[i];
            }
        }
        let lse = log_sum_exp(resp);
        for g in resp.iter_mut() {
            *g = (*g - lse).exp();
        }
        for o in out.iter_mut() {
            *o = T::zero();
        }
        for j in 0..m {
            let g = resp[j];
            for i in 0..d {
                out[i] += g * velocities[j * d + i];
            }
        }
    }
}

impl<T: Scalar> DriftField<T> for GmmFlowField<T> {
    fn dim(&self) -> usize {
        self.mix.dim
    }
    fn label(&self) -> &str {
        &self.label
    }
    fn eval_into(&self, x: &[T], t: T, out: &mut [T]) {
        let mut resp = vec![T::zero(); self.mix.components()];
        self.eval_with(x, t, out, &mut resp);
    }
}

/// Scalar coefficient `t -> c(t)` used by [`PfOdeField`].
pub type Coefficient<T> = Arc<dyn Fn(T) -> T + Send + Sync>;

/// Probability-flow composition `f(t) x - g(t)^2 / 2 * eps(x, t)`.
#[derive(Clone)]
pub struct PfOdeField<T> {
    f_coef: Coefficient<T>,
    g_coef: Coefficient<T>,
    eps: SharedField<T>,
    label: String,
}

impl<T: Scalar> PfOdeField<T> {
    pub fn new(f_coef: Coefficient<T>, g_coef: Coefficient<T>, eps: SharedField<T>) -> Self {
        let label = format!("pf_ode({})", eps.label());
        Self {
            f_coef,
            g_coef,
            eps,
            label,
        }
    }
}

impl<T: Scalar> fmt::Debug for PfOdeField<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PfOdeField").field("label", &self.label).finish()
    }
}

impl<T: Scalar> DriftField<T> for PfOdeField<T> {
    fn dim(&self) -> usize {
        self.eps.dim()
    }
    fn label(&self) -> &str {
        &self.label
    }
    fn eval_into(&self, x: &[T], t: T, out: &mut [T]) {
        self.eps.eval_into(x, t, out);
        let fc = (self.f_coef)(t);
        let g = (self.g_coef)(t);
        let h = T::lit(0.5) * g * g;
        for (o, &v) in out.iter_mut().zip(x) {
            *o = fc * v - h * *o;
        }
    }
}
