//! Sequential Euler, sliding-window Picard iteration and pipelined parareal.

use std::time::Instant;

use rayon::prelude::*;
use rayon::ThreadPool;

use crate::drift::DriftField;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::scalar::{relative_rms, Scalar};
use crate::stepper::scaled;

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineResult<T> {
    pub latent: Vec<T>,
    /// Depth of the evaluation dependency chain, in field evaluations.
    pub sequential_passes: usize,
    pub total_evals: u64,
    pub wall_ms: f64,
    /// Parareal only: final-time latent after the coarse sweep (index 0) and each iteration.
    pub per_iteration_latents: Option<Vec<Vec<T>>>,
}

fn check_dim<T: Scalar, F: DriftField<T> + ?Sized>(field: &F, x0: &[T]) -> Result<()> {
    if x0.len() != field.dim() {
        return Err(Error::invalid(format!(
            "x0 has dimension {}, field expects {}",
            x0.len(),
            field.dim()
        )));
    }
    Ok(())
}

fn pool(workers: usize) -> Result<Option<ThreadPool>> {
    if workers <= 1 {
        return Ok(None);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map(Some)
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))
}

fn par_map<R: Send, G: Fn(usize) -> R + Sync + Send>(pool: Option<&ThreadPool>, n: usize, g: G) -> Vec<R> {
    match pool {
        Some(p) => p.install(|| (0..n).into_par_iter().map(&g).collect()),
        None => (0..n).map(g).collect(),
    }
}

/// Euler over grid indices `from..to`, in place. Same arithmetic as every core of the sampler.
fn euler_sweep<T: Scalar, F: DriftField<T> + ?Sized>(
    field: &F,
    grid: &TimeGrid<T>,
    x: &mut [T],
    from: usize,
    to: usize,
) {
    for i in from..to {
        let drift = field.eval(x, grid.t(i));
        let delta = scaled(&drift, grid.t(i + 1) - grid.t(i));
        for (a, d) in x.iter_mut().zip(&delta) {
            *a += *d;
        }
    }
}

/// `N` Euler steps from `x0`.
pub fn run_sequential<T: Scalar, F: DriftField<T> + ?Sized>(
    field: &F,
    grid: &TimeGrid<T>,
    x0: &[T],
) -> Result<BaselineResult<T>> {
    check_dim(field, x0)?;
    let started = Instant::now();
    let mut x = x0.to_vec();
    euler_sweep(field, grid, &mut x, 0, grid.steps());
    Ok(BaselineResult {
        latent: x,
        sequential_passes: grid.steps(),
        total_evals: grid.steps() as u64,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
        per_iteration_latents: None,
    })
}

/// Every grid latent of the sequential solve, `x_0..=x_N`.
pub fn sequential_trajectory<T: Scalar, F: DriftField<T> + ?Sized>(
    field: &F,
    grid: &TimeGrid<T>,
    x0: &[T],
) -> Result<Vec<Vec<T>>> {
    check_dim(field, x0)?;
    let mut out = Vec::with_capacity(grid.steps() + 1);
    let mut x = x0.to_vec();
    out.push(x.clone());
    for i in 0..grid.steps() {
        euler_sweep(field, grid, &mut x, i, i + 1);
        out.push(x.clone());
    }
    Ok(out)
}

/// Sliding-window Picard iteration.
///
/// The window holds grid points `w+1..=e` with `e = min(w + P, N)`. One
/// iteration evaluates the drift at `w..e` in parallel and replaces every
/// window latent by the cumulative sum `x_w + sum_j h_j f(x_j, t_j)`. The
/// window then slides past its leading points whose relative RMS change was
/// at most `tol`; the first point is exact after one pass, so it always
/// slides by at least one. Newly exposed points start at the last window value.
pub fn run_picard<T: Scalar, F: DriftField<T> + ?Sized>(
    field: &F,
    grid: &TimeGrid<T>,
    x0: &[T],
    window: usize,
    tol: f64,
    workers: usize,
) -> Result<BaselineResult<T>> {
    check_dim(field, x0)?;
    let n = grid.steps();
    if window == 0 || window > n {
        return Err(Error::invalid(format!("picard window must be in 1..={n}, got {window}")));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("picard tolerance must be > 0, got {tol}")));
    }
    let pool = pool(workers)?;
    let started = Instant::now();
    let mut xs: Vec<Vec<T>> = vec![x0.to_vec(); n + 1];
    let mut w = 0usize;
    let mut iterations = 0usize;
    let mut evals = 0u64;
    while w < n {
        let e = (w + window).min(n);
        let drifts = par_map(pool.as_ref(), e - w, |j| field.eval(&xs[w + j], grid.t(w + j)));
        evals += (e - w) as u64;
        iterations += 1;

        let mut acc = xs[w].clone();
        let mut leading = 0usize;
        let mut still_leading = true;
        for (j, drift) in drifts.iter().enumerate() {
            let m = w + j;
            let delta = scaled(drift, grid.t(m + 1) - grid.t(m));
            for (a, d) in acc.iter_mut().zip(&delta) {
                *a += *d;
            }
            let change = relative_rms(&acc, &xs[m + 1]).as_f64();
            if still_leading && (j == 0 || change <= tol) {
                leading += 1;
            } else {
                still_leading = false;
            }
            xs[m + 1].clone_from(&acc);
        }
        let new_w = w + leading;
        let fill = xs[e].clone();
        for x in xs.iter_mut().take((new_w + window).min(n) + 1).skip(e + 1) {
            x.clone_from(&fill);
        }
        w = new_w;
    }
    Ok(BaselineResult {
        latent: xs.swap_remove(n),
        sequential_passes: iterations,
        total_evals: evals,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
        per_iteration_latents: None,
    })
}

/// Default number of coarse intervals, `floor(sqrt(N))`.
pub fn default_coarse_points(n: usize) -> usize {
    ((n as f64).sqrt().floor() as usize).max(1)
}

/// Coarse boundaries `round(j N / M)`, `j = 0..=M`.
pub fn coarse_boundaries(n: usize, m: usize) -> Result<Vec<usize>> {
    if m == 0 || m > n {
        return Err(Error::invalid(format!("coarse points must be in 1..={n}, got {m}")));
    }
    Ok((0..=m)
        .map(|j| ((j * n) as f64 / m as f64).round() as usize)
        .collect())
}

/// Two-level parareal.
///
/// The coarse propagator is one Euler step across an interval, the fine
/// propagator is sequential Euler over its sub-steps. Iteration `j` sets
/// `U_{n+1} = F(U'_n) + (G(U_n) - G(U'_n))` where primes denote the previous
/// iterate; fine solves of one iteration run in parallel. Propagator values
/// are reused when their input is unchanged bit for bit, so converged
/// intervals cost nothing and the `M`-th iterate equals the sequential solve
/// exactly. `sequential_passes` is the depth of the pipelined dependency DAG.
/// Iterations beyond `M` change nothing and are not run.
pub fn run_parareal<T: Scalar, F: DriftField<T> + ?Sized>(
    field: &F,
    grid: &TimeGrid<T>,
    x0: &[T],
    coarse_points: usize,
    max_iters: usize,
    workers: usize,
) -> Result<BaselineResult<T>> {
    check_dim(field, x0)?;
    if max_iters < 1 {
        return Err(Error::invalid("parareal needs at least one iteration"));
    }
    let n = grid.steps();
    let b = coarse_boundaries(n, coarse_points)?;
    let m = coarse_points;
    let pool = pool(workers)?;
    let started = Instant::now();
    let mut evals = 0u64;

    let coarse = |u: &[T], j: usize| -> Vec<T> {
        let drift = field.eval(u, grid.t(b[j]));
        let delta = scaled(&drift, grid.t(b[j + 1]) - grid.t(b[j]));
        u.iter().zip(&delta).map(|(&a, &d)| a + d).collect()
    };
    let fine = |u: &[T], j: usize| -> Vec<T> {
        let mut x = u.to_vec();
        euler_sweep(field, grid, &mut x, b[j], b[j + 1]);
        x
    };

    // coarse sweep
    let mut u: Vec<Vec<T>> = Vec::with_capacity(m + 1);
    let mut g_prev: Vec<Vec<T>> = Vec::with_capacity(m);
    let mut depth: Vec<usize> = Vec::with_capacity(m + 1);
    u.push(x0.to_vec());
    depth.push(0);
    for j in 0..m {
        let g = coarse(&u[j], j);
        evals += 1;
        u.push(g.clone());
        g_prev.push(g);
        depth.push(j + 1);
    }
    let mut history = vec![u[m].clone()];
    // inputs the cached fine values were computed from
    let mut f_input: Vec<Option<Vec<T>>> = vec![None; m];
    let mut f_cache: Vec<Vec<T>> = vec![Vec::new(); m];

    for _iter in 0..max_iters.min(m) {
        let stale: Vec<usize> = (0..m)
            .filter(|&j| f_input[j].as_deref() != Some(&u[j][..]))
            .collect();
        let computed = par_map(pool.as_ref(), stale.len(), |i| fine(&u[stale[i]], stale[i]));
        for (&j, val) in stale.iter().zip(computed) {
            evals += (b[j + 1] - b[j]) as u64;
            f_cache[j] = val;
            f_input[j] = Some(u[j].clone());
        }
        let mut next = vec![x0.to_vec()];
        let mut next_depth = vec![0usize];
        let mut g_new_all = Vec::with_capacity(m);
        for j in 0..m {
            let changed = next[j] != u[j];
            let g_new = if changed {
                evals += 1;
                coarse(&next[j], j)
            } else {
                g_prev[j].clone()
            };
            let val: Vec<T> = f_cache[j]
                .iter()
                .zip(g_new.iter().zip(&g_prev[j]))
                .map(|(&f, (&gn, &go))| f + (gn - go))
                .collect();
            next_depth.push((next_depth[j] + 1).max(depth[j] + (b[j + 1] - b[j])));
            next.push(val);
            g_new_all.push(g_new);
        }
        u = next;
        depth = next_depth;
        g_prev = g_new_all;
        history.push(u[m].clone());
    }
    Ok(BaselineResult {
        latent: u.swap_remove(m),
        sequential_passes: depth[m],
        total_evals: evals,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
        per_iteration_latents: Some(history),
    })
}
