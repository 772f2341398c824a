//! The hierarchical rectification sampler.
//!
//! Every global step is two-phase. In phase one each active core evaluates
//! the drift at its current node and publishes that value together with a
//! snapshot of its latent. In phase two each core forms its Euler increment,
//! adds the rectification built from its upstream neighbour's phase-one
//! publication, and commits. The reference executor runs both phases on one
//! thread; the parallel executor runs cores on worker threads separated by
//! barriers. Both call the same per-core code, so they agree bit for bit.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Barrier, Mutex, RwLock};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::drift::{DriftField, EvalCounter};
use crate::error::{Error, Result};
use crate::grid::{sequential_passes, InitSequence, TimeGrid};
use crate::scalar::{relative_rms, Scalar};
use crate::stepper::{rectify, scaled};

/// `(cur, next)` grid indices core `k` steps between at global step `step`.
///
/// While `step < k` the core is still initializing and jumps `i_step -> i_{step+1}`;
/// afterwards it walks `i_k + step - k -> i_k + step - k + 1`.
pub fn scheduler(n: usize, step: usize, k: usize, seq: &InitSequence) -> Result<(usize, usize)> {
    if step == 0 || k == 0 || k > seq.cores() {
        return Err(Error::invalid(format!(
            "scheduler needs step >= 1 and 1 <= k <= {} (got step {step}, k {k})",
            seq.cores()
        )));
    }
    let (cur, next) = if step < k {
        (seq.start(step), seq.start(step + 1))
    } else {
        let cur = seq.start(k) + step - k;
        (cur, cur + 1)
    };
    if next > n {
        return Err(Error::invalid(format!("core {k} already finished before step {step}")));
    }
    Ok((cur, next))
}

/// Whether core `k` is rectified by core `k - 1` at `step`.
///
/// Always during initialization (`step <= k - 1`, where the correction is
/// exactly zero and only refreshes the anchor), then whenever
/// `(step - (k - 1))` is a multiple of the gap `i_k - i_{k-1}`. The run-time
/// condition that neither core has finished is applied by the engine.
pub fn communicate(step: usize, k: usize, seq: &InitSequence) -> bool {
    communicate_skewed(step, k, seq, 0)
}

fn communicate_skewed(step: usize, k: usize, seq: &InitSequence, skew: usize) -> bool {
    if k <= 1 {
        return false;
    }
    if step <= k - 1 {
        return true;
    }
    (step - (k - 1) + skew) % seq.gap(k) == 0
}

/// When a run stops emitting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum Termination {
    /// Stop right after core `core` emits.
    FixedCore { core: usize },
    /// Stop once an emission differs from the previous one by relative RMS `<= tau`.
    Residual { tau: f64 },
}

impl Termination {
    pub const DEFAULT_TAU: f64 = 1e-3;

    /// Fixed-core termination on the fastest core.
    pub fn fastest(cores: usize) -> Self {
        Termination::FixedCore { core: cores }
    }

    /// Runs until the slowest core emits.
    pub fn exhaustive() -> Self {
        Termination::FixedCore { core: 1 }
    }

    fn validate(&self, cores: usize) -> Result<()> {
        match *self {
            Termination::FixedCore { core } if core == 0 || core > cores => Err(Error::invalid(
                format!("termination core {core} out of range 1..={cores}"),
            )),
            Termination::Residual { tau } if !(tau > 0.0) => {
                Err(Error::invalid("residual termination needs tau > 0"))
            }
            _ => Ok(()),
        }
    }
}

/// How cores are mapped onto threads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Executor {
    /// One thread; cores iterated in order within each phase.
    Reference,
    /// Cores distributed round-robin over `workers` threads with lockstep barriers.
    Parallel { workers: usize },
}

impl Executor {
    /// `workers <= 1` selects the reference executor.
    pub fn from_workers(workers: usize) -> Self {
        if workers <= 1 {
            Executor::Reference
        } else {
            Executor::Parallel { workers }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChordsOptions {
    pub termination: Termination,
    pub executor: Executor,
    /// Also run the reference executor and fail with a diagnostic dump on any mismatch.
    pub verify_executors: bool,
    #[doc(hidden)]
    pub communicate_skew: usize,
}

impl ChordsOptions {
    pub fn new(termination: Termination) -> Self {
        Self {
            termination,
            executor: Executor::Reference,
            verify_executors: false,
            communicate_skew: 0,
        }
    }

    pub fn with_executor(mut self, executor: Executor) -> Self {
        self.executor = executor;
        self
    }
}

/// One early-exit sample.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamedOutput<T> {
    pub core: usize,
    pub global_step: usize,
    /// `N - i_k + k - 1`.
    pub sequential_passes: usize,
    pub latent: Vec<T>,
    /// Field evaluations spent by all cores up to and including this step.
    pub total_evals: u64,
    pub wall_ms: f64,
    /// Set on the slowest core's output, which reproduces the sequential solve.
    pub is_final: bool,
}

#[derive(Debug, Clone)]
pub struct ChordsRun<T> {
    /// Outputs in emission order.
    pub outputs: Vec<StreamedOutput<T>>,
    pub evals: EvalCounter,
    /// `(step, core)` for every rectification applied, including the zero-valued init-phase ones.
    pub rectifications: Vec<(usize, usize)>,
}

impl<T> ChordsRun<T> {
    pub fn last(&self) -> &StreamedOutput<T> {
        self.outputs.last().expect("a run emits at least one output")
    }
}

/// Per-core solver state.
#[derive(Debug, Clone)]
pub struct CoreState<T> {
    pub k: usize,
    pub x: Vec<T>,
    /// Rectification anchor: this core's latent at `anchor_index`.
    pub x_prev: Vec<T>,
    /// `f(x_prev, t(anchor_index))`, filled when the core evaluates there.
    pub anchor_drift: Option<Vec<T>>,
    pub anchor_index: usize,
    pub finished: bool,
    evals: u64,
    cur: usize,
    next: usize,
    drift: Vec<T>,
}

/// What a core exposes to its downstream neighbour during one step.
#[derive(Debug, Clone)]
struct Published<T> {
    x: Vec<T>,
    drift: Vec<T>,
    cur: usize,
}

#[derive(Debug, Clone)]
struct Emission<T> {
    core: usize,
    step: usize,
    latent: Vec<T>,
    wall_ms: f64,
}

struct Ctx<'a, T, F: ?Sized> {
    field: &'a F,
    grid: &'a TimeGrid<T>,
    seq: &'a InitSequence,
    skew: usize,
    started: Instant,
}

impl<T: Scalar> CoreState<T> {
    fn new(k: usize, x0: &[T]) -> Self {
        Self {
            k,
            x: x0.to_vec(),
            x_prev: x0.to_vec(),
            anchor_drift: None,
            anchor_index: 0,
            finished: false,
            evals: 0,
            cur: 0,
            next: 0,
            drift: Vec::new(),
        }
    }

    fn phase_one<F: DriftField<T> + ?Sized>(
        &mut self,
        ctx: &Ctx<'_, T, F>,
        step: usize,
    ) -> Result<Option<Published<T>>> {
        if self.finished {
            return Ok(None);
        }
        let (cur, next) = scheduler(ctx.grid.steps(), step, self.k, ctx.seq)?;
        self.cur = cur;
        self.next = next;
        self.drift = ctx.field.eval(&self.x, ctx.grid.t(cur));
        self.evals += 1;
        if self.anchor_index == cur && self.anchor_drift.is_none() {
            self.anchor_drift = Some(self.drift.clone());
        }
        Ok(Some(Published {
            x: self.x.clone(),
            drift: self.drift.clone(),
            cur,
        }))
    }

    fn phase_two<F: DriftField<T> + ?Sized>(
        &mut self,
        ctx: &Ctx<'_, T, F>,
        step: usize,
        upstream: Option<&Published<T>>,
        rectified: &mut bool,
    ) -> Result<Option<Emission<T>>> {
        *rectified = false;
        if self.finished {
            return Ok(None);
        }
        let grid = ctx.grid;
        let mut delta = scaled(&self.drift, grid.t(self.next) - grid.t(self.cur));
        if let Some(up) = upstream {
            if communicate_skewed(step, self.k, ctx.seq, ctx.skew) {
                let prev = up.cur;
                if self.anchor_index != prev {
                    return Err(Error::Internal(format!(
                        "core {} at step {step}: anchor index {} does not match upstream index {prev} \
                         (cur {}, next {}, sequence {:?})",
                        self.k,
                        self.anchor_index,
                        self.cur,
                        self.next,
                        ctx.seq.indices()
                    )));
                }
                let anchor_drift = self.anchor_drift.as_ref().ok_or_else(|| {
                    Error::Internal(format!(
                        "core {} at step {step}: anchor drift at index {prev} was never evaluated",
                        self.k
                    ))
                })?;
                let r = rectify(
                    &up.x,
                    &self.x_prev,
                    &up.drift,
                    anchor_drift,
                    grid.t(self.next) - grid.t(prev),
                )?;
                for (d, v) in delta.iter_mut().zip(&r) {
                    *d += *v;
                }
                for ((p, &x), &d) in self.x_prev.iter_mut().zip(&self.x).zip(&delta) {
                    *p = x + d;
                }
                self.anchor_index = self.next;
                self.anchor_drift = None;
                *rectified = true;
            }
        }
        for (x, d) in self.x.iter_mut().zip(&delta) {
            *x += *d;
        }
        if self.next == grid.steps() {
            self.finished = true;
            return Ok(Some(Emission {
                core: self.k,
                step,
                latent: self.x.clone(),
                wall_ms: ctx.started.elapsed().as_secs_f64() * 1e3,
            }));
        }
        Ok(None)
    }
}

/// Collects emissions and decides when to stop.
struct Collector<T> {
    termination: Termination,
    n: usize,
    outputs: Vec<StreamedOutput<T>>,
    stopped: bool,
}

impl<T: Scalar> Collector<T> {
    /// Faster cores are listed first when several finish on the same step.
    fn observe(&mut self, mut emissions: Vec<Emission<T>>, seq: &InitSequence, evals_so_far: u64) {
        emissions.sort_by(|a, b| b.core.cmp(&a.core));
        for e in emissions {
            if self.stopped {
                break;
            }
            let prev = self.outputs.last().map(|o| o.latent.clone());
            let out = StreamedOutput {
                core: e.core,
                global_step: e.step,
                sequential_passes: sequential_passes(self.n, seq, e.core),
                latent: e.latent,
                total_evals: evals_so_far,
                wall_ms: e.wall_ms,
                is_final: e.core == 1,
            };
            let stop = out.is_final
                || match self.termination {
                    Termination::FixedCore { core } => out.core == core,
                    Termination::Residual { tau } => prev
                        .map(|p| relative_rms(&out.latent, &p).as_f64() <= tau)
                        .unwrap_or(false),
                };
            self.outputs.push(out);
            self.stopped = stop;
        }
    }
}

/// Runs the sampler from `x0`.
pub fn run_chords<T: Scalar, F: DriftField<T> + ?Sized>(
    field: &F,
    grid: &TimeGrid<T>,
    seq: &InitSequence,
    x0: &[T],
    opts: &ChordsOptions,
) -> Result<ChordsRun<T>> {
    seq.validate(grid.steps())?;
    opts.termination.validate(seq.cores())?;
    if x0.len() != field.dim() {
        return Err(Error::invalid(format!(
            "x0 has dimension {}, field expects {}",
            x0.len(),
            field.dim()
        )));
    }
    let run = match opts.executor {
        Executor::Reference => run_reference(field, grid, seq, x0, opts)?,
        Executor::Parallel { workers } => run_parallel(field, grid, seq, x0, opts, workers)?,
    };
    if opts.verify_executors {
        let other = match opts.executor {
            Executor::Reference => run_parallel(field, grid, seq, x0, opts, seq.cores())?,
            Executor::Parallel { .. } => run_reference(field, grid, seq, x0, opts)?,
        };
        check_agreement(&run, &other)?;
    }
    Ok(run)
}

fn check_agreement<T: Scalar>(a: &ChordsRun<T>, b: &ChordsRun<T>) -> Result<()> {
    let same = a.outputs.len() == b.outputs.len()
        && a.outputs.iter().zip(&b.outputs).all(|(p, q)| {
            p.core == q.core
                && p.global_step == q.global_step
                && p.total_evals == q.total_evals
                && p.latent.len() == q.latent.len()
                && p.latent.iter().zip(&q.latent).all(|(x, y)| x.to_bits_eq(y))
        })
        && a.evals == b.evals
        && a.rectifications == b.rectifications;
    if same {
        return Ok(());
    }
    let dump = |r: &ChordsRun<T>| {
        r.outputs
            .iter()
            .map(|o| format!("  core {} step {} latent {:?}", o.core, o.global_step, o.latent))
            .collect::<Vec<_>>()
            .join("\n")
    };
    Err(Error::Internal(format!(
        "executor divergence\nfirst executor:\n{}\nevals {:?}\nsecond executor:\n{}\nevals {:?}",
        dump(a),
        a.evals.per_core(),
        dump(b),
        b.evals.per_core()
    )))
}

trait BitEq {
    fn to_bits_eq(&self, other: &Self) -> bool;
}

impl<T: Scalar> BitEq for T {
    fn to_bits_eq(&self, other: &Self) -> bool {
        // Same value and same sign of zero; NaNs compare by payload-insensitive identity.
        (self == other && self.is_sign_negative() == other.is_sign_negative())
            || (self.is_nan() && other.is_nan())
    }
}

fn run_reference<T: Scalar, F: DriftField<T> + ?Sized>(
    field: &F,
    grid: &TimeGrid<T>,
    seq: &InitSequence,
    x0: &[T],
    opts: &ChordsOptions,
) -> Result<ChordsRun<T>> {
    let ctx = Ctx {
        field,
        grid,
        seq,
        skew: opts.communicate_skew,
        started: Instant::now(),
    };
    let kk = seq.cores();
    let mut cores: Vec<CoreState<T>> = (1..=kk).map(|k| CoreState::new(k, x0)).collect();
    let mut collector = Collector {
        termination: opts.termination,
        n: grid.steps(),
        outputs: Vec::new(),
        stopped: false,
    };
    let mut rectifications = Vec::new();
    let mut published: Vec<Option<Published<T>>> = vec![None; kk];
    for step in 1..=grid.steps() {
        for (core, slot) in cores.iter_mut().zip(published.iter_mut()) {
            *slot = core.phase_one(&ctx, step)?;
        }
        let mut emissions = Vec::new();
        for i in 0..kk {
            let upstream = if i == 0 { None } else { published[i - 1].as_ref() };
            let mut rectified = false;
            if let Some(e) = cores[i].phase_two(&ctx, step, upstream, &mut rectified)? {
                emissions.push(e);
            }
            if rectified {
                rectifications.push((step, i + 1));
            }
        }
        let evals: u64 = cores.iter().map(|c| c.evals).sum();
        collector.observe(emissions, seq, evals);
        if collector.stopped {
            break;
        }
    }
    let mut counter = EvalCounter::new(kk);
    for c in &cores {
        counter.record(c.k, c.evals);
    }
    Ok(ChordsRun {
        outputs: collector.outputs,
        evals: counter,
        rectifications,
    })
}

fn run_parallel<T: Scalar, F: DriftField<T> + ?Sized>(
    field: &F,
    grid: &TimeGrid<T>,
    seq: &InitSequence,
    x0: &[T],
    opts: &ChordsOptions,
    workers: usize,
) -> Result<ChordsRun<T>> {
    let kk = seq.cores();
    let workers = workers.clamp(1, kk);
    let ctx = Ctx {
        field,
        grid,
        seq,
        skew: opts.communicate_skew,
        started: Instant::now(),
    };
    let published: Vec<RwLock<Option<Published<T>>>> = (0..kk).map(|_| RwLock::new(None)).collect();
    let step_emissions: Mutex<Vec<Emission<T>>> = Mutex::new(Vec::new());
    let step_rects: Mutex<Vec<(usize, usize)>> = Mutex::new(Vec::new());
    let step_evals: Mutex<u64> = Mutex::new(0);
    let failure: Mutex<Option<Error>> = Mutex::new(None);
    let stop = AtomicBool::new(false);
    let barrier = Barrier::new(workers);
    let collector = Mutex::new(Collector {
        termination: opts.termination,
        n: grid.steps(),
        outputs: Vec::new(),
        stopped: false,
    });
    let rectifications: Mutex<Vec<(usize, usize)>> = Mutex::new(Vec::new());

    let fail = |e: Error| {
        let mut slot = failure.lock().unwrap();
        if slot.is_none() {
            *slot = Some(e);
        }
    };

    let finished_cores: Vec<Vec<CoreState<T>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let ctx = &ctx;
                let published = &published;
                let step_emissions = &step_emissions;
                let step_rects = &step_rects;
                let step_evals = &step_evals;
                let failure = &failure;
                let stop = &stop;
                let barrier = &barrier;
                let collector = &collector;
                let rectifications = &rectifications;
                let fail = &fail;
                scope.spawn(move || {
                    let mut mine: Vec<CoreState<T>> = (1..=kk)
                        .filter(|k| (k - 1) % workers == w)
                        .map(|k| CoreState::new(k, x0))
                        .collect();
                    for step in 1..=ctx.grid.steps() {
                        if stop.load(Ordering::SeqCst) {
                            break;
                        }
                        for core in mine.iter_mut() {
                            match core.phase_one(ctx, step) {
                                Ok(p) => *published[core.k - 1].write().unwrap() = p,
                                Err(e) => fail(e),
                            }
                        }
                        barrier.wait();
                        let mut local_evals = 0;
                        for core in mine.iter_mut() {
                            let guard = if core.k > 1 {
                                Some(published[core.k - 2].read().unwrap())
                            } else {
                                None
                            };
                            let upstream = guard.as_ref().and_then(|g| g.as_ref());
                            let mut rectified = false;
                            match core.phase_two(ctx, step, upstream, &mut rectified) {
                                Ok(Some(e)) => step_emissions.lock().unwrap().push(e),
                                Ok(None) => {}
                                Err(e) => fail(e),
                            }
                            if rectified {
                                step_rects.lock().unwrap().push((step, core.k));
                            }
                            local_evals += core.evals;
                        }
                        *step_evals.lock().unwrap() += local_evals;
                        if barrier.wait().is_leader() {
                            let emissions = std::mem::take(&mut *step_emissions.lock().unwrap());
                            let mut rects = std::mem::take(&mut *step_rects.lock().unwrap());
                            rects.sort_unstable();
                            rectifications.lock().unwrap().extend(rects);
                            let evals = std::mem::take(&mut *step_evals.lock().unwrap());
                            let mut c = collector.lock().unwrap();
                            c.observe(emissions, ctx.seq, evals);
                            if c.stopped || failure.lock().unwrap().is_some() {
                                stop.store(true, Ordering::SeqCst);
                            }
                        }
                        barrier.wait();
                    }
                    mine
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });

    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    let mut counter = EvalCounter::new(kk);
    for c in finished_cores.iter().flatten() {
        counter.record(c.k, c.evals);
    }
    Ok(ChordsRun {
        outputs: collector.into_inner().unwrap().outputs,
        evals: counter,
        rectifications: rectifications.into_inner().unwrap(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::{LinearField, MlpField};

    fn seq(v: &[usize], n: usize) -> InitSequence {
        InitSequence::new(v.to_vec(), n).unwrap()
    }

    #[test]
    fn scheduler_examples() {
        let s = seq(&[0, 8, 16, 32], 50);
        assert_eq!(scheduler(50, 2, 4, &s).unwrap(), (8, 16));
        assert_eq!(scheduler(50, 5, 4, &s).unwrap(), (33, 34));
        assert_eq!(scheduler(50, 1, 4, &s).unwrap(), (0, 8));
        assert_eq!(scheduler(50, 3, 4, &s).unwrap(), (16, 32));
        assert_eq!(scheduler(50, 4, 4, &s).unwrap(), (32, 33));
        for step in 1..=50 {
            assert_eq!(scheduler(50, step, 1, &s).unwrap(), (step - 1, step));
        }
        assert!(scheduler(50, 22, 4, &s).is_err());
        assert!(scheduler(50, 0, 1, &s).is_err());
        assert!(scheduler(50, 1, 5, &s).is_err());
    }

    #[test]
    fn communicate_examples() {
        let s = seq(&[0, 8], 50);
        let fired: Vec<usize> = (1..=42).filter(|&st| communicate(st, 2, &s)).collect();
        assert_eq!(fired, vec![1, 9, 17, 25, 33, 41]);
        for st in 1..50 {
            assert!(!communicate(st, 1, &s));
        }
        let s = seq(&[0, 8, 16, 32], 50);
        assert!(communicate(3, 4, &s));
        assert!(communicate(19, 4, &s));
        assert!(!communicate(20, 4, &s));
    }

    #[test]
    fn slow_core_reproduces_sequential_bits() {
        let f = MlpField::<f64>::new(3, 4, 16, 2).unwrap();
        let g = TimeGrid::uniform(30).unwrap();
        let s = seq(&[0, 3, 6, 12], 30);
        let x0 = vec![0.5, -0.1, 0.3, 1.0];
        let run = run_chords(&f, &g, &s, &x0, &ChordsOptions::new(Termination::exhaustive())).unwrap();
        let mut x = x0.clone();
        for i in 0..30 {
            let d = f.eval(&x, g.t(i));
            let h = g.t(i + 1) - g.t(i);
            for (a, b) in x.iter_mut().zip(&d) {
                *a += h * b;
            }
        }
        let last = run.last();
        assert!(last.is_final);
        assert_eq!(last.core, 1);
        assert_eq!(last.sequential_passes, 30);
        assert_eq!(last.latent, x);
    }

    #[test]
    fn emissions_carry_pass_counts() {
        let f = LinearField::new(1.0, 1);
        let g = TimeGrid::uniform(50).unwrap();
        let s = seq(&[0, 8, 16, 32], 50);
        let run = run_chords(&f, &g, &s, &[1.0], &ChordsOptions::new(Termination::exhaustive())).unwrap();
        let passes: Vec<(usize, usize)> =
            run.outputs.iter().map(|o| (o.core, o.sequential_passes)).collect();
        assert_eq!(passes, vec![(4, 21), (3, 36), (2, 43), (1, 50)]);
        for o in &run.outputs {
            assert_eq!(o.global_step, o.sequential_passes);
        }
        // every core evaluates once per active step
        assert_eq!(run.evals.per_core(), &[50, 43, 36, 21]);
        assert_eq!(run.evals.total(), 150);
    }

    #[test]
    fn fixed_core_termination_stops_early() {
        let f = LinearField::new(1.0, 1);
        let g = TimeGrid::uniform(50).unwrap();
        let s = seq(&[0, 8, 16, 32], 50);
        let run = run_chords(&f, &g, &s, &[1.0], &ChordsOptions::new(Termination::fastest(4))).unwrap();
        assert_eq!(run.outputs.len(), 1);
        assert_eq!(run.outputs[0].core, 4);
        assert_eq!(run.outputs[0].total_evals, 4 * 21);
    }

    #[test]
    fn residual_termination() {
        let f = LinearField::new(1.0, 1);
        let g = TimeGrid::uniform(50).unwrap();
        let s = seq(&[0, 2, 4, 8, 16, 24, 32, 40], 50);
        let loose = run_chords(&f, &g, &s, &[1.0], &ChordsOptions::new(Termination::Residual { tau: 1.0 })).unwrap();
        assert_eq!(loose.outputs.len(), 2);
        let full = run_chords(&f, &g, &s, &[1.0], &ChordsOptions::new(Termination::exhaustive())).unwrap();
        for tau in [1e-300f64, 1e-8, 1e-4] {
            let expect = (1..full.outputs.len())
                .find(|&i| {
                    let (a, b): (f64, f64) = (full.outputs[i].latent[0], full.outputs[i - 1].latent[0]);
                    ((a - b) / b).abs() <= tau
                })
                .map_or(full.outputs.len(), |i| i + 1);
            let run = run_chords(&f, &g, &s, &[1.0], &ChordsOptions::new(Termination::Residual { tau })).unwrap();
            assert_eq!(run.outputs.len(), expect, "tau {tau}");
            for (a, b) in run.outputs.iter().zip(&full.outputs) {
                assert_eq!((a.core, &a.latent), (b.core, &b.latent));
            }
        }
        assert!(run_chords(&f, &g, &s, &[1.0], &ChordsOptions::new(Termination::Residual { tau: 0.0 })).is_err());
    }

    #[test]
    fn rectification_schedule_is_recorded() {
        let f = LinearField::new(1.0, 1);
        let g = TimeGrid::uniform(50).unwrap();
        let s = seq(&[0, 8], 50);
        let run = run_chords(&f, &g, &s, &[1.0], &ChordsOptions::new(Termination::exhaustive())).unwrap();
        let steps: Vec<usize> = run.rectifications.iter().map(|r| r.0).collect();
        assert_eq!(steps, vec![1, 9, 17, 25, 33, 41]);
    }

    #[test]
    fn skewed_predicate_is_caught_by_anchor_check() {
        let f = LinearField::new(1.0, 1);
        let g = TimeGrid::uniform(50).unwrap();
        let s = seq(&[0, 8, 16, 32], 50);
        let mut opts = ChordsOptions::new(Termination::exhaustive());
        opts.communicate_skew = 1;
        let err = run_chords(&f, &g, &s, &[1.0], &opts).unwrap_err();
        assert!(matches!(err, Error::Internal(_)));
    }

    #[test]
    fn parallel_matches_reference_bitwise() {
        let f = MlpField::<f64>::new(12, 3, 16, 2).unwrap();
        let g = TimeGrid::uniform(50).unwrap();
        let s = seq(&[0, 2, 4, 8, 16, 24, 32, 40], 50);
        let x0 = vec![0.2, 0.9, -0.4];
        for workers in [2, 3, 8, 16] {
            let mut opts = ChordsOptions::new(Termination::exhaustive())
                .with_executor(Executor::Parallel { workers });
            opts.verify_executors = true;
            let a = run_chords(&f, &g, &s, &x0, &opts).unwrap();
            let b = run_chords(&f, &g, &s, &x0, &ChordsOptions::new(Termination::exhaustive())).unwrap();
            assert_eq!(a.outputs.len(), b.outputs.len());
            for (p, q) in a.outputs.iter().zip(&b.outputs) {
                assert_eq!(p.latent, q.latent);
            }
            assert_eq!(a.rectifications, b.rectifications);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let f = LinearField::new(1.0, 2);
        let g = TimeGrid::uniform(10).unwrap();
        let s = seq(&[0, 4], 10);
        let o = ChordsOptions::new(Termination::exhaustive());
        assert!(run_chords(&f, &g, &s, &[1.0], &o).is_err());
        let too_long = InitSequence::new_unchecked(vec![0, 12]);
        assert!(run_chords(&f, &g, &too_long, &[1.0, 1.0], &o).is_err());
        let o = ChordsOptions::new(Termination::FixedCore { core: 3 });
        assert!(run_chords(&f, &g, &s, &[1.0, 1.0], &o).is_err());
    }

    #[test]
    fn single_core_run_is_sequential() {
        let f = LinearField::new(1.0, 1);
        let g = TimeGrid::uniform(10).unwrap();
        let s = seq(&[0], 10);
        let run = run_chords(&f, &g, &s, &[1.0], &ChordsOptions::new(Termination::fastest(1))).unwrap();
        assert_eq!(run.outputs.len(), 1);
        let expect = (1.0f64 + 0.1).powi(10);
        assert!((run.outputs[0].latent[0] - expect).abs() < 1e-14);
    }
}
