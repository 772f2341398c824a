//! Fast self-checks with stable names, used by the `verify` command.

use std::fmt;
use std::str::FromStr;

use crate::baselines::run_sequential;
use crate::drift::{DriftField, GaussianMixture, GmmFlowField, LinearField, MlpField};
use crate::engine::{run_chords, ChordsOptions, Executor, Termination};
use crate::error::{Error, Result};
use crate::grid::{InitSequence, TimeGrid};
use crate::rng::{seeded, standard_normal};
use crate::schedule::{brute_force_optimal_mid, discretize_sequence, optimal_continuous_sequence, reward};
use crate::stepper::rectify;

/// Deliberate defects for exercising the checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Shifts the post-initialization rectification schedule by one step.
    CommunicateSchedule,
}

impl FromStr for Fault {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "communicate-schedule" => Ok(Fault::CommunicateSchedule),
            other => Err(Error::invalid(format!("unknown fault `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

/// Classic fourth-order Runge-Kutta from `t0` to `t1` in `substeps` equal steps.
pub fn rk4_flow<F: DriftField<f64> + ?Sized>(field: &F, x: &[f64], t0: f64, t1: f64, substeps: usize) -> Vec<f64> {
    let h = (t1 - t0) / substeps as f64;
    let mut x = x.to_vec();
    let axpy = |x: &[f64], a: f64, k: &[f64]| -> Vec<f64> { x.iter().zip(k).map(|(&p, &q)| p + a * q).collect() };
    for i in 0..substeps {
        let t = t0 + i as f64 * h;
        let k1 = field.eval(&x, t);
        let k2 = field.eval(&axpy(&x, h / 2.0, &k1), t + h / 2.0);
        let k3 = field.eval(&axpy(&x, h / 2.0, &k2), t + h / 2.0);
        let k4 = field.eval(&axpy(&x, h, &k3), t + h);
        for j in 0..x.len() {
            x[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
    }
    x
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// `(delta, rectified error, unrectified error)` for a perturbation of size `eps`.
pub fn rectification_errors<F: DriftField<f64> + ?Sized>(
    field: &F,
    x: &[f64],
    direction: &[f64],
    t: f64,
    eps: f64,
    deltas: &[f64],
) -> Result<Vec<(f64, f64, f64)>> {
    let n = norm(direction);
    let xt: Vec<f64> = x.iter().zip(direction).map(|(&a, &u)| a + eps * u / n).collect();
    let fx = field.eval(x, t);
    let fxt = field.eval(&xt, t);
    deltas
        .iter()
        .map(|&d| {
            let exact = rk4_flow(field, x, t, t + d, 200);
            let approx = rk4_flow(field, &xt, t, t + d, 200);
            let r = rectify(x, &xt, &fx, &fxt, d)?;
            let rect: Vec<f64> = approx.iter().zip(&r).zip(&exact).map(|((&a, &b), &c)| a + b - c).collect();
            let unrect: Vec<f64> = approx.iter().zip(&exact).map(|(&a, &c)| a - c).collect();
            Ok((d, norm(&rect), norm(&unrect)))
        })
        .collect()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let num: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    num / den
}

fn options(term: Termination, executor: Executor, fault: Option<Fault>) -> ChordsOptions {
    let mut o = ChordsOptions::new(term).with_executor(executor);
    if fault == Some(Fault::CommunicateSchedule) {
        o.communicate_skew = 1;
    }
    o
}

fn outcome(name: &'static str, r: Result<String>) -> CheckOutcome {
    match r {
        Ok(detail) => CheckOutcome {
            name,
            passed: true,
            detail,
        },
        Err(e) => CheckOutcome {
            name,
            passed: false,
            detail: e.to_string(),
        },
    }
}

fn fail(msg: String) -> Error {
    Error::Internal(msg)
}

fn builtin_fields() -> Result<Vec<Box<dyn DriftField<f64>>>> {
    Ok(vec![
        Box::new(LinearField::new(1.0, 2)),
        Box::new(MlpField::new(11, 6, 16, 2)?),
        Box::new(GmmFlowField::new(GaussianMixture::ring(8, 2, 3.0, 0.5)?)),
    ])
}

fn check_exactness(fault: Option<Fault>) -> Result<String> {
    let mut runs = 0;
    for field in builtin_fields()? {
        let x0 = standard_normal(&mut seeded(5), field.dim());
        for n in [10, 50] {
            let grid = TimeGrid::uniform(n)?;
            let seq = discretize_sequence(&optimal_continuous_sequence(2.0, 4)?, &grid)?;
            let reference = run_sequential(&*field, &grid, &x0)?.latent;
            for ex in [Executor::Reference, Executor::Parallel { workers: 4 }] {
                let run = run_chords(&*field, &grid, &seq, &x0, &options(Termination::exhaustive(), ex, fault))?;
                let last = run.last();
                if last.core != 1 || last.latent != reference {
                    return Err(fail(format!(
                        "{} N={n} {:?}: slowest core differs from the sequential solve",
                        field.label(),
                        ex
                    )));
                }
                runs += 1;
            }
        }
    }
    Ok(format!("{runs} runs bit-identical to sequential"))
}

fn check_rectification_order() -> Result<String> {
    let field = MlpField::<f64>::new(2024, 16, 32, 2)?;
    let x = standard_normal(&mut seeded(1), 16);
    let u = standard_normal(&mut seeded(2), 16);
    let deltas = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3];
    let errs = rectification_errors(&field, &x, &u, 0.3, 1e-2, &deltas)?;
    let slope = loglog_slope(&errs.iter().map(|e| (e.0, e.1)).collect::<Vec<_>>());
    if let Some(e) = errs.iter().find(|e| !(e.1 < e.2)) {
        return Err(fail(format!("rectified error {:.3e} not below {:.3e} at delta {}", e.1, e.2, e.0)));
    }
    if !(slope >= 1.9) {
        return Err(fail(format!("log-log slope {slope:.3} < 1.9")));
    }
    Ok(format!("slope {slope:.3}"))
}

/// Best of the two analytic candidates for the middle start of `[0, mid, (s-1)/s]`:
/// the halfway point, and for `s > 3` the point `2 t3 - 1` whose single
/// rectification lands exactly at `t = 1`.
pub fn three_core_optimum(s: f64) -> f64 {
    let last = (s - 1.0) / s;
    let half = last / 2.0;
    if last <= 2.0 / 3.0 {
        return half;
    }
    let aligned = 2.0 * last - 1.0;
    let r = |mid: f64| {
        crate::grid::ContinuousInitSequence::new(vec![0.0, mid, last])
            .map(|c| reward(&c).reward)
            .unwrap_or(f64::NEG_INFINITY)
    };
    if r(aligned) >= r(half) {
        aligned
    } else {
        half
    }
}

fn check_optimal_sequence() -> Result<String> {
    let mut worst: f64 = 0.0;
    for s in [2.0f64, 2.5, 3.0, 4.0, 6.0] {
        let last = (s - 1.0) / s;
        let expect = three_core_optimum(s);
        let found = brute_force_optimal_mid(s, 2000)?;
        let cell = last / 2001.0;
        let off = (found - expect).abs() / cell;
        worst = worst.max(off);
        if off > 1.0 + 1e-9 {
            return Err(fail(format!("s={s}: brute force {found:.6} vs {expect:.6} ({off:.2} cells)")));
        }
    }
    Ok(format!("max deviation {worst:.2} grid cells"))
}

fn check_reward_closed_form() -> Result<String> {
    for t in [0.1, 0.2] {
        let cont = crate::grid::ContinuousInitSequence::new(vec![0.0, t])?;
        let trace = reward(&cont);
        for k in 1..=5usize {
            let expect = (k as f64 * t).exp() - (t.exp() - t - 1.0).powi(k as i32);
            let got = trace
                .value_at(2, k as f64 * t)
                .ok_or_else(|| fail(format!("no event at {}", k as f64 * t)))?;
            if (got - expect).abs() > 1e-12 * expect {
                return Err(fail(format!("t={t} k={k}: {got} vs {expect}")));
            }
        }
    }
    let one = reward(&crate::grid::ContinuousInitSequence::new(vec![0.0])?).reward;
    if one != 1.0 {
        return Err(fail(format!("single-core reward {one} != 1")));
    }
    Ok("two-core closed form within 1e-12".into())
}

/// Steps at which core `k` must be rectified, from the schedule's definition.
fn expected_rectifications(n: usize, seq: &InitSequence) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for k in 2..=seq.cores() {
        let g = seq.start(k) - seq.start(k - 1);
        let finish = n - seq.start(k) + k - 1;
        for step in 1..k {
            out.push((step, k));
        }
        let mut step = k - 1 + g;
        while step <= finish {
            out.push((step, k));
            step += g;
        }
    }
    out.sort_unstable();
    out
}

fn check_communicate_schedule(fault: Option<Fault>) -> Result<String> {
    let field = LinearField::new(1.0, 1);
    let cases: [(usize, &[usize]); 4] = [
        (50, &[0, 8]),
        (50, &[0, 8, 16, 32]),
        (50, &[0, 2, 4, 8, 16, 24, 32, 40]),
        (23, &[0, 3, 7, 8, 15]),
    ];
    let mut total = 0;
    for (n, idx) in cases {
        let grid = TimeGrid::uniform(n)?;
        let seq = InitSequence::new(idx.to_vec(), n)?;
        let run = run_chords(&field, &grid, &seq, &[1.0], &options(Termination::exhaustive(), Executor::Reference, fault))?;
        let mut got = run.rectifications.clone();
        got.sort_unstable();
        let expect = expected_rectifications(n, &seq);
        if got != expect {
            return Err(fail(format!("sequence {idx:?}: rectified at {got:?}, expected {expect:?}")));
        }
        total += got.len();
    }
    Ok(format!("{total} rectifications on schedule"))
}

fn check_executor_agreement(fault: Option<Fault>) -> Result<String> {
    let field = MlpField::<f64>::new(3, 8, 16, 2)?;
    let grid = TimeGrid::uniform(50)?;
    let seq = InitSequence::new(vec![0, 2, 4, 8, 16, 24, 32, 40], 50)?;
    for seed in 0..4 {
        let x0 = standard_normal(&mut seeded(seed), 8);
        let a = run_chords(&field, &grid, &seq, &x0, &options(Termination::exhaustive(), Executor::Reference, fault))?;
        let b = run_chords(
            &field,
            &grid,
            &seq,
            &x0,
            &options(Termination::exhaustive(), Executor::Parallel { workers: 8 }, fault),
        )?;
        let same = a.outputs.len() == b.outputs.len()
            && a.outputs.iter().zip(&b.outputs).all(|(p, q)| p.latent == q.latent && p.core == q.core);
        if !same {
            return Err(fail(format!("seed {seed}: executors disagree")));
        }
    }
    Ok("4 seeds bit-identical".into())
}

/// Runs every check in a fixed order.
pub fn run_checks(fault: Option<Fault>) -> Vec<CheckOutcome> {
    vec![
        outcome("exactness", check_exactness(fault)),
        outcome("communicate-schedule", check_communicate_schedule(fault)),
        outcome("executor-agreement", check_executor_agreement(fault)),
        outcome("rectification-order", check_rectification_order()),
        outcome("optimal-sequence", check_optimal_sequence()),
        outcome("reward-closed-form", check_reward_closed_form()),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for c in run_checks(None) {
            assert!(c.passed, "{c}");
        }
    }

    #[test]
    fn injected_fault_is_named() {
        let report = run_checks(Some(Fault::CommunicateSchedule));
        let sched = report.iter().find(|c| c.name == "communicate-schedule").unwrap();
        assert!(!sched.passed);
        assert!(report.iter().find(|c| c.name == "optimal-sequence").unwrap().passed);
        assert!("communicate-schedule".parse::<Fault>().is_ok());
        assert!("nope".parse::<Fault>().is_err());
    }

    #[test]
    fn three_core_optimum_switches_to_halving_for_large_speedups() {
        assert_eq!(three_core_optimum(2.0), 0.25);
        assert_eq!(three_core_optimum(4.0), 0.5);
        assert_eq!(three_core_optimum(6.0), 5.0 / 12.0);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let f = LinearField::new(1.0, 1);
        let e1 = (rk4_flow(&f, &[1.0], 0.0, 1.0, 10)[0] - 1f64.exp()).abs();
        let e2 = (rk4_flow(&f, &[1.0], 0.0, 1.0, 20)[0] - 1f64.exp()).abs();
        assert!((e1 / e2).log2() > 3.8);
    }

    #[test]
    fn expected_schedule_matches_examples() {
        let seq = InitSequence::new(vec![0, 8], 50).unwrap();
        let steps: Vec<usize> = expected_rectifications(50, &seq).iter().map(|r| r.0).collect();
        assert_eq!(steps, vec![1, 9, 17, 25, 33, 41]);
    }
}
