//! Parallel-in-time ODE sampling lab.
//!
//! The core solver is [`engine::run_chords`]: `K` cores start the same
//! Euler solve at staggered grid indices, and each core is periodically
//! corrected by its slower neighbour so fast cores stream usable early
//! samples while the slowest core reproduces the sequential solution.
//! Around it sit drift fields, sequence theory, Picard and parareal
//! baselines, and an experiment harness.
//!
//! All numerics are generic over [`Scalar`] (`f32` or `f64`).

pub mod baselines;
pub mod bench;
pub mod config;
pub mod drift;
pub mod engine;
pub mod error;
pub mod grid;
mod linalg;
pub mod rng;
pub mod scalar;
pub mod schedule;
pub mod stepper;
pub mod verify;

pub use baselines::{run_parareal, run_picard, run_sequential, BaselineResult};
pub use drift::{
    DriftField, EvalCounter, GaussianMixture, GmmFlowField, LinearField, MlpField, PfOdeField,
    SharedField,
};
pub use engine::{
    communicate, run_chords, scheduler, ChordsOptions, ChordsRun, Executor, StreamedOutput,
    Termination,
};
pub use error::{Error, Result};
pub use grid::{nominal_speedup, sequential_passes, ContinuousInitSequence, InitSequence, TimeGrid};
pub use scalar::Scalar;
pub use schedule::{
    discretize_sequence, optimal_continuous_sequence, reward, reward_with, InitMode, RewardTrace,
};
pub use stepper::{euler_step, rectify};

pub type TimeGridF64 = TimeGrid<f64>;
pub type TimeGridF32 = TimeGrid<f32>;
pub type ContinuousInitSequenceF64 = ContinuousInitSequence<f64>;
pub type LinearFieldF64 = LinearField<f64>;
pub type LinearFieldF32 = LinearField<f32>;
pub type MlpFieldF64 = MlpField<f64>;
pub type MlpFieldF32 = MlpField<f32>;
pub type GaussianMixtureF64 = GaussianMixture<f64>;
pub type GmmFlowFieldF64 = GmmFlowField<f64>;
pub type ChordsRunF64 = ChordsRun<f64>;
pub type ChordsRunF32 = ChordsRun<f32>;
