//! Time discretization of `[0, 1]` and the initialization sequences that
//! assign each core its start time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// The discretization `t(0) = 0 < t(1) < ... < t(N) = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid<T> {
    times: Vec<T>,
    uniform: bool,
}

impl<T: Scalar> TimeGrid<T> {
    /// `t(i) = i / N`.
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("grid needs at least one step (N >= 1)"));
        }
        let nn = T::from_count(n);
        let times = (0..=n).map(|i| T::from_count(i) / nn).collect();
        Ok(Self {
            times,
            uniform: true,
        })
    }

    /// Builds a grid from explicit node times.
    pub fn from_times(times: Vec<T>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::invalid("grid needs at least two nodes"));
        }
        if times[0] != T::zero() || *times.last().unwrap() != T::one() {
            return Err(Error::invalid("grid must start at exactly 0 and end at exactly 1"));
        }
        if let Some(i) = times.windows(2).position(|w| !(w[0] < w[1])) {
            return Err(Error::invalid(format!(
                "grid times must be strictly increasing (violated between nodes {i} and {})",
                i + 1
            )));
        }
        Ok(Self {
            times,
            uniform: false,
        })
    }

    /// Number of steps `N`.
    #[inline]
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    #[inline]
    pub fn t(&self, i: usize) -> T {
        self.times[i]
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    /// True when built by [`TimeGrid::uniform`].
    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    /// Index of the node nearest to `t`; ties go to the smaller index.
    pub fn nearest_index(&self, t: T) -> usize {
        let upper = self.times.partition_point(|&x| x < t);
        if upper == 0 {
            return 0;
        }
        if upper == self.times.len() {
            return self.times.len() - 1;
        }
        let lo = upper - 1;
        if t - self.times[lo] <= self.times[upper] - t {
            lo
        } else {
            upper
        }
    }
}

/// Discrete start indices `[i_1, ..., i_K]`, a subsequence of `[0, N)`.
///
/// Cores are numbered from 1 (slowest) to K (fastest) throughout the crate.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InitSequence {
    indices: Vec<usize>,
}

impl InitSequence {
    /// Validates `i_1 = 0`, strict increase and `i_K < n`.
    pub fn new(indices: Vec<usize>, n: usize) -> Result<Self> {
        let seq = Self { indices };
        seq.validate(n)?;
        Ok(seq)
    }

    #[cfg(test)]
    pub(crate) fn new_unchecked(indices: Vec<usize>) -> Self {
        Self { indices }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.indices.is_empty() {
            return Err(Error::invalid("initialization sequence needs at least one core"));
        }
        if self.indices[0] != 0 {
            return Err(Error::invalid("initialization sequence must start at index 0"));
        }
        if self.indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("initialization sequence must be strictly increasing"));
        }
        let last = *self.indices.last().unwrap();
        if last >= n {
            return Err(Error::invalid(format!(
                "last start index {last} must be below N = {n} (K = {} cores)",
                self.indices.len()
            )));
        }
        Ok(())
    }

    /// Number of cores `K`.
    #[inline]
    pub fn cores(&self) -> usize {
        self.indices.len()
    }

    /// Start index `i_k` of core `k` (1-based).
    #[inline]
    pub fn start(&self, k: usize) -> usize {
        self.indices[k - 1]
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Gap `i_k - i_{k-1}` between core `k` and its upstream neighbour (`k >= 2`).
    #[inline]
    pub fn gap(&self, k: usize) -> usize {
        self.start(k) - self.start(k - 1)
    }

    /// Scales every index by `to_n / from_n` (rounded), then repairs strict increase.
    pub fn rescale(&self, from_n: usize, to_n: usize) -> Result<Self> {
        let mut out: Vec<usize> = self
            .indices
            .iter()
            .map(|&i| ((i * to_n) as f64 / from_n as f64).round() as usize)
            .collect();
        repair_indices(&mut out, to_n);
        Self::new(out, to_n)
    }
}

/// Forces `idx[0] = 0`, bumps forward to strict increase, then clamps the tail below `n`.
pub(crate) fn repair_indices(idx: &mut [usize], n: usize) {
    if idx.is_empty() {
        return;
    }
    idx[0] = 0;
    for k in 1..idx.len() {
        idx[k] = idx[k].max(idx[k - 1] + 1);
    }
    let last = idx.len() - 1;
    if n > 0 && idx[last] >= n {
        idx[last] = n - 1;
        for k in (1..last).rev() {
            idx[k] = idx[k].min(idx[k + 1] - 1);
        }
    }
}

/// Continuous start times `0 = t^(1) < ... < t^(K) < 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousInitSequence<T> {
    starts: Vec<T>,
}

impl<T: Scalar> ContinuousInitSequence<T> {
    pub fn new(starts: Vec<T>) -> Result<Self> {
        if starts.is_empty() {
            return Err(Error::invalid("continuous sequence needs at least one core"));
        }
        if starts[0] != T::zero() {
            return Err(Error::invalid("continuous sequence must start at 0"));
        }
        if starts.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("continuous sequence must be strictly increasing"));
        }
        if !(*starts.last().unwrap() < T::one()) {
            return Err(Error::invalid("last start time must be below 1"));
        }
        Ok(Self { starts })
    }

    pub fn cores(&self) -> usize {
        self.starts.len()
    }

    pub fn starts(&self) -> &[T] {
        &self.starts
    }

    /// Start time of core `k` (1-based).
    pub fn start(&self, k: usize) -> T {
        self.starts[k - 1]
    }

    /// `1 / (1 - t^(K))`.
    pub fn speedup(&self) -> T {
        T::one() / (T::one() - *self.starts.last().unwrap())
    }
}

/// Fraction of the sequential depth saved by core `k`: `1 / (1 - t(i_k) + (k-1)/N)`.
///
/// On a uniform grid this is evaluated in the equivalent integer form
/// `N / (N - i_k + k - 1)` so that it matches pass-count speedups exactly.
pub fn nominal_speedup<T: Scalar>(grid: &TimeGrid<T>, seq: &InitSequence, k: usize) -> Result<T> {
    if k == 0 || k > seq.cores() {
        return Err(Error::invalid(format!(
            "core index {k} out of range 1..={}",
            seq.cores()
        )));
    }
    let n = grid.steps();
    let ik = seq.start(k);
    if ik >= n {
        return Err(Error::invalid("sequence does not fit the grid"));
    }
    if grid.is_uniform() {
        let passes = n - ik + k - 1;
        return Ok(T::from_count(n) / T::from_count(passes));
    }
    let lag = T::from_count(k - 1) / T::from_count(n);
    Ok(T::one() / (T::one() - grid.t(ik) + lag))
}

/// Sequential drift-evaluation depth needed for core `k`'s output: `N - i_k + k - 1`.
#[inline]
pub fn sequential_passes(n: usize, seq: &InitSequence, k: usize) -> usize {
    n - seq.start(k) + k - 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_grid_values() {
        let g = TimeGrid::<f64>::uniform(2).unwrap();
        assert_eq!(g.times(), &[0.0, 0.5, 1.0]);
        let g = TimeGrid::<f64>::uniform(50).unwrap();
        assert_eq!(g.t(32), 0.64);
        assert_eq!(g.t(50), 1.0);
        let g = TimeGrid::<f64>::uniform(1).unwrap();
        assert_eq!(g.times(), &[0.0, 1.0]);
        assert!(TimeGrid::<f64>::uniform(0).is_err());
    }

    #[test]
    fn explicit_grid_validation() {
        assert!(TimeGrid::from_times(vec![0.0, 0.3, 1.0]).is_ok());
        assert!(TimeGrid::from_times(vec![0.0, 0.3, 0.3, 1.0]).is_err());
        assert!(TimeGrid::from_times(vec![0.1, 1.0]).is_err());
        assert!(TimeGrid::from_times(vec![0.0, 0.9]).is_err());
    }

    #[test]
    fn nearest_index_ties_go_low() {
        let g = TimeGrid::<f64>::uniform(4).unwrap();
        assert_eq!(g.nearest_index(0.125), 0);
        assert_eq!(g.nearest_index(0.13), 1);
        assert_eq!(g.nearest_index(-1.0), 0);
        assert_eq!(g.nearest_index(2.0), 4);
    }

    #[test]
    fn sequence_validation() {
        assert!(InitSequence::new(vec![0, 8, 16, 32], 50).is_ok());
        assert!(InitSequence::new(vec![1, 8], 50).is_err());
        assert!(InitSequence::new(vec![0, 8, 8], 50).is_err());
        assert!(InitSequence::new(vec![0, 50], 50).is_err());
        assert!(InitSequence::new(vec![], 50).is_err());
    }

    #[test]
    fn nominal_speedup_examples() {
        let g = TimeGrid::<f64>::uniform(50).unwrap();
        let s4 = InitSequence::new(vec![0, 8, 16, 32], 50).unwrap();
        assert_eq!(nominal_speedup(&g, &s4, 4).unwrap(), 50.0 / 21.0);
        assert_eq!(nominal_speedup(&g, &s4, 1).unwrap(), 1.0);
        let s8 = InitSequence::new(vec![0, 2, 4, 8, 16, 24, 32, 40], 50).unwrap();
        let v = nominal_speedup(&g, &s8, 8).unwrap();
        assert_eq!(v, 50.0 / 17.0);
        assert!((v - 2.9).abs() < 0.05);
        assert!(nominal_speedup(&g, &s8, 0).is_err());
        assert!(nominal_speedup(&g, &s8, 9).is_err());
    }

    #[test]
    fn nominal_speedup_general_formula_agrees_with_uniform_form() {
        let times: Vec<f64> = (0..=50).map(|i| i as f64 / 50.0).collect();
        let g = TimeGrid::from_times(times).unwrap();
        let s = InitSequence::new(vec![0, 8, 16, 32], 50).unwrap();
        let v = nominal_speedup(&g, &s, 4).unwrap();
        assert!((v - 50.0 / 21.0).abs() < 1e-12);
    }

    #[test]
    fn continuous_speedup_examples() {
        let s = ContinuousInitSequence::new(vec![0.0]).unwrap();
        assert_eq!(s.speedup(), 1.0);
        let s = ContinuousInitSequence::new(vec![0.0f64, 0.2, 0.4, 0.7]).unwrap();
        assert!((s.speedup() - 10.0 / 3.0).abs() < 1e-12);
        let s = ContinuousInitSequence::new(vec![0.0, 0.5]).unwrap();
        assert_eq!(s.speedup(), 2.0);
        assert!(ContinuousInitSequence::new(vec![0.0, 1.0]).is_err());
        assert!(ContinuousInitSequence::<f64>::new(vec![]).is_err());
    }

    #[test]
    fn rescale_default_sequence() {
        let s = InitSequence::new(vec![0, 2, 4, 8, 16, 24, 32, 40], 50).unwrap();
        assert_eq!(s.rescale(50, 100).unwrap().indices(), &[0, 4, 8, 16, 32, 48, 64, 80]);
        assert_eq!(s.rescale(50, 75).unwrap().indices(), &[0, 3, 6, 12, 24, 36, 48, 60]);
    }

    #[test]
    fn repair_clamps_tail() {
        let mut v = vec![0, 5, 10, 10];
        repair_indices(&mut v, 11);
        assert_eq!(v, vec![0, 5, 9, 10]);
        let mut v = vec![0, 4, 4, 4];
        repair_indices(&mut v, 4);
        assert_eq!(v, vec![0, 1, 2, 3]);
    }
}
