//! Initialization-sequence design.
//!
//! The reward of a continuous sequence is the log of the fastest core's final
//! value when the hierarchy integrates `dx/dt = x` from `x(0) = 1`. Exact
//! propagation multiplies by `e^dt`, a coarse jump by `1 + dt`, and a
//! rectification over `delta` replaces the head value `v` by
//! `v + (1 + delta) * (upstream - anchor)`. Everything is closed form.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{repair_indices, ContinuousInitSequence, InitSequence, TimeGrid};
use crate::scalar::Scalar;

/// How a core's starting latent is produced from `x0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Coarse jumps `t^(1) -> t^(2) -> ... -> t^(k)`.
    #[default]
    Chained,
    /// One coarse jump `0 -> t^(k)`.
    SingleJump,
}

/// Start times from the fast-to-slow recursion.
///
/// `t^(K) = (s-1)/s`, then for `k = K-1 .. 2` (with `t^(K+1) = 1`):
/// `t^(k) = 2 t^(k+1) - t^(k+2)` when `t^(k+1) > 2/3 t^(k+2)`, else `t^(k+1) / 2`.
pub fn optimal_continuous_sequence<T: Scalar>(s: T, cores: usize) -> Result<ContinuousInitSequence<T>> {
    if !(s >= T::one()) {
        return Err(Error::invalid(format!("speedup must be >= 1 (got {s})")));
    }
    if cores == 0 {
        return Err(Error::invalid("need at least one core"));
    }
    if cores == 1 {
        if s != T::one() {
            return Err(Error::invalid("a single core cannot realize a speedup above 1"));
        }
        return ContinuousInitSequence::new(vec![T::zero()]);
    }
    if s == T::one() {
        return Err(Error::invalid(format!(
            "speedup 1 leaves no room for {cores} cores; use speedup > 1"
        )));
    }
    let two = T::lit(2.0);
    let two_thirds = T::lit(2.0) / T::lit(3.0);
    // t[k] holds t^(k) for k = 1..=K+1 (index 0 unused).
    let mut t = vec![T::zero(); cores + 2];
    t[cores + 1] = T::one();
    t[cores] = (s - T::one()) / s;
    let mut underflow = false;
    for k in (2..cores).rev() {
        let next = t[k + 1];
        t[k] = if underflow {
            next / two
        } else if next > two_thirds * t[k + 2] {
            two * next - t[k + 2]
        } else {
            next / two
        };
        if !(t[k] > T::zero()) {
            underflow = true;
            t[k] = next / two;
        }
    }
    t[1] = T::zero();
    ContinuousInitSequence::new(t[1..=cores].to_vec())
}

/// Nearest grid index per start time (ties low), repaired to strict increase.
pub fn discretize_sequence<T: Scalar>(
    cont: &ContinuousInitSequence<T>,
    grid: &TimeGrid<T>,
) -> Result<InitSequence> {
    let n = grid.steps();
    let k = cont.cores();
    if n < k {
        return Err(Error::invalid(format!(
            "grid with N = {n} steps cannot host {k} distinct start indices"
        )));
    }
    let mut idx: Vec<usize> = cont.starts().iter().map(|&t| grid.nearest_index(t)).collect();
    repair_indices(&mut idx, n);
    InitSequence::new(idx, n)
}

/// Exact outcome of the hierarchy on `dx/dt = x`, `x(0) = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardTrace<T> {
    /// Fastest core's value at `t = 1`.
    pub final_value: T,
    /// `ln(final_value)`.
    pub reward: T,
    /// Per core: `(time, value)` at initialization, after each rectification,
    /// and where the core stands when the fastest core reaches `t = 1`.
    pub trajectories: Vec<Vec<(T, T)>>,
}

impl<T: Scalar> RewardTrace<T> {
    /// Value of core `k` (1-based) recorded at `time`, if an event point sits there.
    pub fn value_at(&self, k: usize, time: T) -> Option<T> {
        let tol = T::lit(1e-9);
        self.trajectories[k - 1]
            .iter()
            .find(|(t, _)| (*t - time).abs() <= tol)
            .map(|&(_, v)| v)
    }
}

pub fn reward<T: Scalar>(cont: &ContinuousInitSequence<T>) -> RewardTrace<T> {
    reward_with(cont, InitMode::Chained)
}

pub fn reward_with<T: Scalar>(cont: &ContinuousInitSequence<T>, init: InitMode) -> RewardTrace<T> {
    let kk = cont.cores();
    let starts = cont.starts();
    let one = T::one();
    // Event times that agree to this tolerance are treated as simultaneous.
    let tol = T::lit(1e-12);

    let mut head: Vec<T> = Vec::with_capacity(kk);
    let mut chained = one;
    for k in 0..kk {
        if k > 0 {
            chained *= one + starts[k] - starts[k - 1];
        }
        head.push(match init {
            InitMode::Chained => chained,
            InitMode::SingleJump => one + starts[k],
        });
    }
    let mut anchor = head.clone();
    let mut trajectories: Vec<Vec<(T, T)>> =
        (0..kk).map(|k| vec![(starts[k], head[k])]).collect();

    let w_end = one - starts[kk - 1];
    let mut events: Vec<(T, usize)> = Vec::new();
    for k in 1..kk {
        let delta = starts[k] - starts[k - 1];
        let mut n = 1usize;
        loop {
            let w = T::from_count(n) * delta;
            if starts[k] + w > one + tol || w > w_end + tol {
                break;
            }
            events.push((w, k));
            n += 1;
        }
    }
    events.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));

    let mut wall = T::zero();
    let mut i = 0;
    while i < events.len() {
        let w = events[i].0;
        let mut j = i;
        while j < events.len() && events[j].0 - w <= tol {
            j += 1;
        }
        let mut group: Vec<usize> = events[i..j].iter().map(|e| e.1).collect();
        group.sort_unstable();
        let grow = (w - wall).exp();
        for v in head.iter_mut() {
            *v *= grow;
        }
        wall = w;
        for &k in &group {
            let delta = starts[k] - starts[k - 1];
            let corr = (one + delta) * (head[k - 1] - anchor[k]);
            head[k] += corr;
            anchor[k] = head[k];
            trajectories[k].push(((starts[k] + wall).min(one), head[k]));
        }
        i = j;
    }
    let grow = (w_end - wall).max(T::zero()).exp();
    for (k, v) in head.iter_mut().enumerate() {
        *v *= grow;
        trajectories[k].push(((starts[k] + w_end).min(one), *v));
    }
    let final_value = head[kk - 1];
    RewardTrace {
        final_value,
        reward: final_value.ln(),
        trajectories,
    }
}

/// Reward of `[0, mid, (s-1)/s]` for `resolution` evenly spaced interior
/// `mid` values; returns `(argmax, max reward)` with lowest-index tie-break.
pub fn scan_three_core<T: Scalar>(s: T, resolution: usize) -> Result<(T, T)> {
    if !(s > T::one()) {
        return Err(Error::invalid("three-core scan needs speedup > 1"));
    }
    if resolution == 0 {
        return Err(Error::invalid("resolution must be positive"));
    }
    let last = (s - T::one()) / s;
    let cells = T::from_count(resolution + 1);
    let rewards: Vec<(T, T)> = (1..=resolution)
        .into_par_iter()
        .map(|j| {
            let mid = last * T::from_count(j) / cells;
            let seq = ContinuousInitSequence::new(vec![T::zero(), mid, last])
                .expect("interior point keeps the sequence valid");
            (mid, reward(&seq).reward)
        })
        .collect();
    let mut best = rewards[0];
    for &(mid, r) in &rewards[1..] {
        if r > best.1 {
            best = (mid, r);
        }
    }
    Ok(best)
}

/// Brute-force optimum of the middle start time for three cores at speedup `s`.
pub fn brute_force_optimal_mid<T: Scalar>(s: T, resolution: usize) -> Result<T> {
    if !(s >= T::lit(2.0)) {
        return Err(Error::invalid("brute-force scan is defined for speedup >= 2"));
    }
    if resolution < 100 {
        return Err(Error::invalid("resolution must be at least 100"));
    }
    Ok(scan_three_core(s, resolution)?.0)
}

/// Hand-tuned sequences for K = 4, 6, 8, stated at N = 50 and rescaled
/// proportionally to other step counts.
pub fn tuned_sequence(cores: usize, steps: usize) -> Result<InitSequence> {
    let idx: &[usize] = match cores {
        4 => &[0, 8, 16, 32],
        6 => &[0, 3, 6, 12, 24, 36],
        8 => &[0, 2, 4, 8, 16, 24, 32, 40],
        _ => {
            return Err(Error::invalid(format!(
                "no default sequence for K = {cores}; use an optimal sequence \
                 (optimal_continuous_sequence + discretize_sequence) instead"
            )))
        }
    };
    let base = InitSequence::new(idx.to_vec(), 50)?;
    if steps == 50 {
        return Ok(base);
    }
    if steps < cores {
        return Err(Error::invalid(format!("K = {cores} cores need at least {cores} steps, got N = {steps}")));
    }
    base.rescale(50, steps)
}

/// Evenly spaced starts with spacing `round(6 N / 50)`, shrunk if the last start would not fit.
pub fn uniform_sequence(cores: usize, steps: usize) -> Result<InitSequence> {
    if cores == 0 || cores > steps {
        return Err(Error::invalid(format!(
            "uniform sequence needs 1 <= K <= N (K = {cores}, N = {steps})"
        )));
    }
    let mut gap = ((6 * steps) as f64 / 50.0).round().max(1.0) as usize;
    if cores > 1 && (cores - 1) * gap >= steps {
        gap = (steps - 1) / (cores - 1);
    }
    InitSequence::new((0..cores).map(|j| j * gap).collect(), steps)
}
